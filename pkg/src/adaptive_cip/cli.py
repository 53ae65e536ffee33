"""Command line entry point: ``adaptive-cip {generate,invert,gradcheck,report}``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .config import apply_paper_scale, load, preset
from .errors import AdaptiveCIPError, ConfigurationError
from .io import read_csv
from .wavefield import BC_MODES

log = logging.getLogger("adaptive_cip")


def _config(args):
    if args.config:
        cfg = load(args.config)
        if args.paper_scale:
            cfg = apply_paper_scale(cfg)
    else:
        cfg = preset(args.preset, paper_scale=args.paper_scale)
    if args.seed is not None:
        cfg.noise = dataclasses.replace(cfg.noise, seed=args.seed)
    if getattr(args, "variant", None):
        cfg.adaptive = dataclasses.replace(cfg.adaptive, variant=args.variant)
    return cfg.validate()


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI experiment file")
    p.add_argument("--preset", default="desk-sphere", help="named setup used when --config is absent")
    p.add_argument("--out", type=Path, help="output directory (default: $ADAPTIVE_CIP_OUT or the config value)")
    p.add_argument("--seed", type=int, help="noise seed")
    p.add_argument("--paper-scale", action="store_true", help="h0 = 0.05, omega = 40, dt = 0.006, alpha = 0.01")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptive-cip", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="phantom and synthetic boundary data")
    _common(g)

    inv = sub.add_parser("invert", help="adaptive reconstruction")
    _common(inv)
    inv.add_argument("--variant", choices=("first", "second"))

    gc = sub.add_parser("gradcheck", help="adjoint gradient vs central differences on a 48-tet mesh")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--directions", type=int, default=5)
    gc.add_argument("--steps", type=int, default=8)
    gc.add_argument("--bc-mode", choices=BC_MODES, default="hybrid")
    gc.add_argument("--tol", type=float, default=1e-3)

    rep = sub.add_parser("report", help="print the summary table of a finished run")
    rep.add_argument("--out", type=Path, required=True)
    return parser


def _report(out: Path) -> int:
    path = out / "summary.csv"
    if not path.exists():
        print(f"no summary at {path}", file=sys.stderr)
        return 1
    header, rows = read_csv(path)
    cols = ("level", "n_tets", "M_k", "eps_tilde", "error_percent", "cg_stop")
    idx = [header.index(c) for c in cols]
    print(" ".join(f"{c:>14}" for c in cols))
    for r in rows:
        cells = []
        for i in idx:
            try:
                v = float(r[i])
                cells.append(f"{v:14.4g}")
            except ValueError:
                cells.append(f"{r[i]:>14}")
        print(" ".join(cells))
    if rows:
        print(f"k_rec = {rows[-1][header.index('k_rec')]}  stop = {rows[-1][header.index('stop_reason')]}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gradcheck":
            from .harness import gradient_check

            checks = gradient_check(args.seed, args.directions, args.steps, bc_mode=args.bc_mode)
            for i, c in enumerate(checks, start=1):
                print(f"direction {i}: fd={c.directional_fd:.10e} adjoint={c.directional_adjoint:.10e} rel={c.rel_error:.3e}")
            ok = all(c.rel_error <= args.tol for c in checks)
            print("PASS" if ok else "FAIL")
            return 0 if ok else 1
        if args.command == "report":
            return _report(args.out)

        from .harness import run_experiment

        cfg = _config(args)

        def progress(k, mesh, eps, rec):
            print(f"level {k}: {rec.n_tets} tets, {rec.cg_iterations} CG iterations ({rec.cg_stop}), max eps {rec.eps_max:.3f}")

        res = run_experiment(cfg, args.out, generate_only=args.command == "generate", on_level=progress)
        print(f"wrote {len(res.files)} files to {res.out_dir}")
        if res.run is not None:
            print(f"stop: {res.run.stop_reason}, k_rec = {res.run.k_rec}")
        return 0
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (AdaptiveCIPError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())

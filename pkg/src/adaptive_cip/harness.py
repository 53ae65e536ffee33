"""End-to-end experiment runs and the finite-difference gradient check."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .adaptivity import AdaptiveRun, LevelRecord, run_adaptive
from .config import ExperimentConfig, dumps
from .experiment import add_noise, generate_data, relative_error, synthesize_phantom
from .io import write_csv, write_history_csv, write_manifest, write_observation_csv, write_vtk
from .mesh import Box, TetMesh, build_uniform_mesh
from .objective import TikhonovParams, evaluate
from .optimizer import HISTORY_FIELDS
from .wavefield import BoundaryObservation, ObservationSurface, SourceSpec, TimeGrid, cfl_time_grid, solve_direct

log = logging.getLogger(__name__)

OUT_ENV = "ADAPTIVE_CIP_OUT"

SUMMARY_FIELDS = (
    "level",
    "n_tets",
    "n_vertices",
    "n_steps",
    "M_k",
    "cg_stop",
    "eps_tilde",
    "error_percent",
    "grad_norm",
    "min_grad_norm",
    "eps_change",
    "n_marked",
    "argmax_x",
    "argmax_y",
    "argmax_z",
    "k_rec",
    "stop_reason",
)


def output_dir(cfg: ExperimentConfig, out=None) -> Path:
    """``out`` if given, else the environment override, else the config value."""
    return Path(out or os.environ.get(OUT_ENV) or cfg.output_dir)


def build_mesh(cfg: ExperimentConfig) -> TetMesh:
    g = cfg.geometry
    return build_uniform_mesh(g.outer, g.h0, g.inner)


def initial_grid(cfg: ExperimentConfig, mesh: TetMesh) -> TimeGrid:
    return cfl_time_grid(mesh, cfg.t_final, cfg.inversion.eps_max, cfg.dt)


@dataclass
class GeneratedData:
    mesh: TetMesh
    grid: TimeGrid
    clean: list[BoundaryObservation]
    noisy: list[BoundaryObservation]

    def on_mesh(self, records, mesh: TetMesh, grid: TimeGrid) -> list[BoundaryObservation]:
        return [r.resample(ObservationSurface.from_mesh(mesh, r.surface.tags), grid.times) for r in records]


def generate(cfg: ExperimentConfig, mesh: TetMesh | None = None) -> GeneratedData:
    """Clean and noisy records on the data-generation mesh."""
    mesh = mesh or build_mesh(cfg)
    grid = initial_grid(cfg, mesh)
    inv = cfg.inversion
    clean = generate_data(
        mesh, cfg.phantom, cfg.sources, grid, cfg.observe,
        bc_mode=inv.bc_mode, s=inv.s, eps_max=inv.eps_max, same_mesh=cfg.same_mesh,
    )
    noisy = [add_noise(r, cfg.noise.sigma, cfg.noise.seed, cfg.noise.model) for r in clean]
    return GeneratedData(mesh, grid, clean, noisy)


def argmax_center(eps: np.ndarray, mesh: TetMesh) -> np.ndarray:
    """Centroid of the inner element with the largest mean permittivity."""
    mean = eps[mesh.tets].mean(axis=1)
    mean = np.where(mesh.inner_tets, mean, -np.inf)
    return mesh.centroids[int(np.argmax(mean))]


def summary_rows(run: AdaptiveRun, cfg: ExperimentConfig) -> list[list]:
    rows = []
    for rec, mesh, eps in zip(run.records, run.meshes, run.eps_per_level):
        true = synthesize_phantom(cfg.phantom, mesh, cfg.inversion.eps_max).values
        e = eps.values
        inner = mesh.inner_box.contains(mesh.vertices)
        c = argmax_center(e, mesh)
        rows.append(
            [
                rec.level,
                rec.n_tets,
                rec.n_vertices,
                rec.n_steps,
                rec.cg_iterations,
                rec.cg_stop,
                float(e[inner].max()),
                100.0 * relative_error(true, e, mesh),
                rec.grad_norm,
                rec.min_grad_norm,
                rec.eps_change,
                rec.n_marked,
                float(c[0]),
                float(c[1]),
                float(c[2]),
                run.k_rec,
                run.stop_reason,
            ]
        )
    return rows


@dataclass
class ExperimentResult:
    out_dir: Path
    files: list[Path] = field(default_factory=list)
    data: GeneratedData | None = None
    run: AdaptiveRun | None = None
    summary: list[list] = field(default_factory=list)


def _write_data_files(cfg, gen: GeneratedData, out: Path) -> list[Path]:
    files = []
    (out / "config.ini").write_text(dumps(cfg), encoding="utf-8")
    files.append(out / "config.ini")
    true = synthesize_phantom(cfg.phantom, gen.mesh, cfg.inversion.eps_max).values
    if cfg.write_vtk:
        files.append(write_vtk(out / "phantom.vtk", gen.mesh, {"eps_true": true}, title=f"{cfg.name} phantom"))
    for kind, records in (("clean", gen.clean), ("noisy", gen.noisy)):
        for i, obs in enumerate(gen.on_mesh(records, gen.mesh, gen.grid), start=1):
            files.append(write_observation_csv(out / f"data_{kind}_source{i}.csv", obs))
    return files


def _manifest(cfg, out: Path, files, extra=None) -> Path:
    entries = {
        "package": f"adaptive_cip {__version__}",
        "experiment": cfg.name,
        "config_sha256": cfg.digest(),
        "noise_model": cfg.noise.model,
        "noise_sigma": repr(cfg.noise.sigma),
        "noise_seed": cfg.noise.seed,
        "bc_mode": cfg.inversion.bc_mode,
        "variant": cfg.adaptive.variant,
        "data_mesh": "same" if cfg.same_mesh else "refined once globally",
    }
    entries.update(extra or {})
    return write_manifest(out / "manifest.txt", entries, files)


def run_experiment(cfg: ExperimentConfig, out=None, *, generate_only: bool = False, on_level=None) -> ExperimentResult:
    """Generate data, run the adaptive reconstruction and write all artifacts.

    Files: ``config.ini``, ``phantom.vtk``, ``data_{clean,noisy}_source<i>.csv``
    (on the level-0 mesh and time grid), ``level<k>.vtk``,
    ``history_level<k>.csv``, ``summary.csv`` and ``manifest.txt``.
    """
    cfg.validate()
    out = output_dir(cfg, out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    gen = generate(cfg)
    result = ExperimentResult(out, data=gen)
    result.files.extend(_write_data_files(cfg, gen, out))
    if generate_only:
        result.files.append(_manifest(cfg, out, result.files))
        return result

    params = cfg.tikhonov()
    run = run_adaptive(
        gen.mesh, cfg.inversion.eps0, gen.noisy, cfg.sources, params, cfg.t_final, cfg.cg, cfg.adaptive,
        dt=cfg.dt, on_level=on_level,
    )
    result.run = run
    for k, (mesh, eps, state) in enumerate(zip(run.meshes, run.eps_per_level, run.states)):
        result.files.append(write_history_csv(out / f"history_level{k}.csv", state.history, HISTORY_FIELDS))
        if cfg.write_vtk:
            point = {
                "eps_rec": eps.values,
                "eps_true": synthesize_phantom(cfg.phantom, mesh, cfg.inversion.eps_max).values,
            }
            cell = {}
            if k < len(run.indicators):
                cell["indicator"] = run.indicators[k].values
                marked = np.zeros(mesh.n_tets)
                marked[run.markings[k].elements] = 1.0
                cell["marked"] = marked
            result.files.append(write_vtk(out / f"level{k}.vtk", mesh, point, cell, title=f"{cfg.name} level {k}"))
    result.summary = summary_rows(run, cfg)
    result.files.append(write_csv(out / "summary.csv", SUMMARY_FIELDS, result.summary))
    result.files.append(
        _manifest(cfg, out, result.files, {"stop_reason": run.stop_reason, "k_rec": run.k_rec})
    )
    for w in run.warnings:
        log.warning(w)
    return result


# -- finite-difference gradient check --------------------------------------

@dataclass
class GradientCheck:
    directional_fd: float
    directional_adjoint: float

    @property
    def rel_error(self) -> float:
        return abs(self.directional_fd - self.directional_adjoint) / max(abs(self.directional_fd), 1e-300)


def gradient_check(
    seed: int = 0,
    n_dirs: int = 5,
    n_steps: int = 8,
    h: float = 1e-4,
    bc_mode: str = "hybrid",
    all_free: bool = True,
) -> list[GradientCheck]:
    """Compare ``<dF, d>`` from the adjoint with central differences.

    The mesh is the unit cube split into 48 tetrahedra. With ``all_free`` the
    inner box encloses the whole mesh so every vertex is a free unknown;
    otherwise only the centre vertex is.
    """
    rng = np.random.default_rng(seed)
    inner = Box.cube(-1.0, 2.0) if all_free else Box.cube(0.0, 1.0)
    mesh = build_uniform_mesh(Box.cube(0.0, 1.0), 0.5, inner)
    grid = TimeGrid(0.1 * n_steps, n_steps)
    sources = [SourceSpec(10.0, "front")]
    free = mesh.free_vertices
    e_true = np.where(free, 1.0 + 4.0 * rng.random(mesh.n_vertices), 1.0)
    _, G = solve_direct(mesh, e_true, sources[0], grid, bc_mode, observe=("front", "back"))
    G.values += 0.01 * rng.standard_normal(G.values.shape)
    params = TikhonovParams(alpha=0.01, bc_mode=bc_mode, delta=0.25 * grid.t_final)
    # stay away from the bounds so +-h perturbations are not clipped
    eps = np.where(free, 1.5 + 3.0 * rng.random(mesh.n_vertices), 1.0)
    base = evaluate(mesh, eps, [G], sources, params, grid)
    out = []
    for _ in range(n_dirs):
        d = np.where(free, rng.standard_normal(mesh.n_vertices), 0.0)
        fp = evaluate(mesh, eps + h * d, [G], sources, params, grid, with_gradient=False).value
        fm = evaluate(mesh, eps - h * d, [G], sources, params, grid, with_gradient=False).value
        out.append(GradientCheck((fp - fm) / (2 * h), float(base.gradient.dual @ d)))
    return out

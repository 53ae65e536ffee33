"""Experiment configuration: dataclasses, INI round trip and presets.

The file format is an INI file with flat sections::

    [geometry]
    outer_lo = -0.8, -0.8, -0.8
    outer_hi = 0.8, 0.8, 0.8
    inner_lo = -0.7, -0.7, -0.7
    inner_hi = 0.7, 0.7, 0.7
    h0 = 0.1

    [sources]
    faces = front            ; one source per listed face
    omega = 5.0
    component = 2
    amplitude = 1.0
    omega_2 = 10.0           ; optional override for source 2, likewise component_2, amplitude_2

    [observation]
    faces = front, back      ; shared by every source
    faces_2 = back           ; optional override for source 2 (1-based)

    [time]
    t_final = 3.0
    dt = auto                ; or a number, reduced further if CFL requires

    [inversion]
    alpha = 0.001
    s = 1.0
    delta = auto             ; 0.1 * t_final
    eps_max = 5.0
    eps0 = 1.0
    bc_mode = neumann        ; hybrid, neumann or absorbing
    literal_divergence_term = false

    [phantom]
    kind = spheres           ; or gaussians
    spheres = -0.3 0 -0.25 0.3 2.0            ; x y z diameter contrast; ...
    gaussians = 0.3 0 0 1 0.2; -0.4 0.2 0 1 0.2 ; x y z amplitude width; ...

    [noise]
    sigma = 0.03
    seed = 1
    model = additive         ; or relative

    [data]
    same_mesh = false

    [cg]
    theta = 0.0
    max_iter = 10
    stagnation_window = 3
    stagnation_rtol = 1e-7
    safeguard = 20

    [adaptive]
    variant = first          ; or second
    beta = 0.7
    beta_tilde = 0.7
    theta1 = 0.0
    theta2 = 0.0
    max_levels = 2
    shift_coefficient = false

    [output]
    directory = out
    write_vtk = true
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field

from .adaptivity import AdaptiveSettings
from .errors import ConfigurationError
from .experiment import Gaussian, PhantomSpec, Sphere, two_gaussians
from .mesh import TAG_CODES, Box
from .optimizer import CgSettings
from .wavefield import BC_MODES, SourceSpec


@dataclass
class GeometryConfig:
    outer_lo: tuple[float, float, float] = (-0.8, -0.8, -0.8)
    outer_hi: tuple[float, float, float] = (0.8, 0.8, 0.8)
    inner_lo: tuple[float, float, float] = (-0.7, -0.7, -0.7)
    inner_hi: tuple[float, float, float] = (0.7, 0.7, 0.7)
    h0: float = 0.1

    @property
    def outer(self) -> Box:
        return Box(tuple(self.outer_lo), tuple(self.outer_hi))

    @property
    def inner(self) -> Box:
        return Box(tuple(self.inner_lo), tuple(self.inner_hi))


@dataclass
class NoiseConfig:
    sigma: float = 0.0
    seed: int = 1
    model: str = "additive"


@dataclass
class InversionConfig:
    alpha: float = 0.001
    s: float = 1.0
    delta: float | None = None
    eps_max: float = 5.0
    eps0: float = 1.0
    bc_mode: str = "neumann"
    literal_divergence_term: bool = False


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    sources: tuple[SourceSpec, ...] = (SourceSpec(5.0, "front"),)
    observe: tuple[tuple[str, ...], ...] = (("front", "back"),)
    t_final: float = 3.0
    dt: float | None = None
    inversion: InversionConfig = field(default_factory=InversionConfig)
    phantom: PhantomSpec = field(default_factory=lambda: PhantomSpec("spheres"))
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    same_mesh: bool = False
    cg: CgSettings = field(default_factory=lambda: CgSettings(theta=0.0, max_iter=10, stagnation_rtol=1e-7))
    adaptive: AdaptiveSettings = field(default_factory=lambda: AdaptiveSettings(max_levels=2))
    output_dir: str = "out"
    write_vtk: bool = True

    def validate(self) -> "ExperimentConfig":
        g = self.geometry
        if g.h0 <= 0:
            raise ConfigurationError("h0 must be positive")
        for lo, hi, what in ((g.outer_lo, g.outer_hi, "outer"), (g.inner_lo, g.inner_hi, "inner")):
            if any(a >= b for a, b in zip(lo, hi)):
                raise ConfigurationError(f"{what} box has non-positive extent")
        if any(a < b for a, b in zip(g.inner_lo, g.outer_lo)) or any(a > b for a, b in zip(g.inner_hi, g.outer_hi)):
            raise ConfigurationError("inner box must lie inside the outer box")
        if not self.sources:
            raise ConfigurationError("at least one source is required")
        if len(self.observe) != len(self.sources):
            raise ConfigurationError("one observation face set is needed per source")
        for tags in self.observe:
            for t in tags:
                if t not in TAG_CODES:
                    raise ConfigurationError(f"unknown observation face {t!r}")
        if self.noise.sigma < 0:
            raise ConfigurationError("noise level must be non-negative")
        if self.noise.model not in ("additive", "relative"):
            raise ConfigurationError(f"unknown noise model {self.noise.model!r}")
        if self.inversion.bc_mode not in BC_MODES:
            raise ConfigurationError(f"unknown boundary mode {self.inversion.bc_mode!r}")
        if self.inversion.alpha <= 0 or self.inversion.s < 1:
            raise ConfigurationError("need alpha > 0 and s >= 1")
        if self.t_final <= 0:
            raise ConfigurationError("t_final must be positive")
        centers = self.phantom.centers
        inner = g.inner
        import numpy as np

        if centers and not np.all(inner.contains(np.asarray(centers))):
            raise ConfigurationError("phantom centre lies outside the inner box")
        return self

    def tikhonov(self):
        from .objective import TikhonovParams

        inv = self.inversion
        return TikhonovParams(
            alpha=inv.alpha,
            eps0=inv.eps0,
            delta=inv.delta,
            s=inv.s,
            eps_max=inv.eps_max,
            bc_mode=inv.bc_mode,
            literal_divergence_term=inv.literal_divergence_term,
        )

    def digest(self) -> str:
        return hashlib.sha256(dumps(self).encode()).hexdigest()


# -- serialisation ----------------------------------------------------------

def _num(x: float) -> str:
    return repr(float(x))


def _vec(v) -> str:
    return ", ".join(_num(x) for x in v)


def _bool(s: str) -> bool:
    s = s.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"not a boolean: {s!r}")


def _opt(s: str) -> float | None:
    s = s.strip().lower()
    return None if s in ("auto", "none", "") else float(s)


def _parse_vec(s: str) -> tuple[float, float, float]:
    parts = [float(x) for x in s.replace(",", " ").split()]
    if len(parts) != 3:
        raise ConfigurationError(f"expected three numbers, got {s!r}")
    return tuple(parts)


def _parse_list(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.split(",") if x.strip())


def dumps(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    g = cfg.geometry
    cp["experiment"] = {"name": cfg.name}
    cp["geometry"] = {
        "outer_lo": _vec(g.outer_lo),
        "outer_hi": _vec(g.outer_hi),
        "inner_lo": _vec(g.inner_lo),
        "inner_hi": _vec(g.inner_hi),
        "h0": _num(g.h0),
    }
    first = cfg.sources[0]
    src = {
        "faces": ", ".join(s.face for s in cfg.sources),
        "omega": _num(first.omega),
        "component": str(first.component),
        "amplitude": _num(first.amplitude),
    }
    for i, s in enumerate(cfg.sources[1:], start=2):
        if s.omega != first.omega:
            src[f"omega_{i}"] = _num(s.omega)
        if s.component != first.component:
            src[f"component_{i}"] = str(s.component)
        if s.amplitude != first.amplitude:
            src[f"amplitude_{i}"] = _num(s.amplitude)
    cp["sources"] = src
    obs = {"faces": ", ".join(cfg.observe[0])}
    for i, tags in enumerate(cfg.observe[1:], start=2):
        obs[f"faces_{i}"] = ", ".join(tags)
    cp["observation"] = obs
    cp["time"] = {"t_final": _num(cfg.t_final), "dt": "auto" if cfg.dt is None else _num(cfg.dt)}
    inv = cfg.inversion
    cp["inversion"] = {
        "alpha": _num(inv.alpha),
        "s": _num(inv.s),
        "delta": "auto" if inv.delta is None else _num(inv.delta),
        "eps_max": _num(inv.eps_max),
        "eps0": _num(inv.eps0),
        "bc_mode": inv.bc_mode,
        "literal_divergence_term": str(inv.literal_divergence_term).lower(),
    }
    ph = cfg.phantom
    cp["phantom"] = {
        "kind": ph.kind,
        "spheres": "; ".join(" ".join(_num(x) for x in (*s.center, s.diameter, s.contrast)) for s in ph.spheres),
        "gaussians": "; ".join(" ".join(_num(x) for x in (*q.center, q.amplitude, q.width)) for q in ph.gaussians),
    }
    cp["noise"] = {"sigma": _num(cfg.noise.sigma), "seed": str(cfg.noise.seed), "model": cfg.noise.model}
    cp["data"] = {"same_mesh": str(cfg.same_mesh).lower()}
    c = cfg.cg
    cp["cg"] = {
        "theta": _num(c.theta),
        "max_iter": str(c.max_iter),
        "stagnation_window": str(c.stagnation_window),
        "stagnation_rtol": _num(c.stagnation_rtol),
        "safeguard": str(c.safeguard),
    }
    a = cfg.adaptive
    cp["adaptive"] = {
        "variant": a.variant,
        "beta": _num(a.beta),
        "beta_tilde": _num(a.beta_tilde),
        "theta1": _num(a.theta1),
        "theta2": _num(a.theta2),
        "max_levels": str(a.max_levels),
        "shift_coefficient": str(a.shift_coefficient).lower(),
    }
    cp["output"] = {"directory": cfg.output_dir, "write_vtk": str(cfg.write_vtk).lower()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _parse_items(s: str, n: int, what: str) -> list[list[float]]:
    out = []
    for chunk in s.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        vals = [float(x) for x in chunk.replace(",", " ").split()]
        if len(vals) != n:
            raise ConfigurationError(f"each {what} needs {n} numbers, got {chunk!r}")
        out.append(vals)
    return out


def loads(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.read_string(text)
    base = ExperimentConfig()

    def get(section, key, default):
        if cp.has_option(section, key):
            return cp.get(section, key)
        return default

    try:
        gd = base.geometry
        geometry = GeometryConfig(
            outer_lo=_parse_vec(get("geometry", "outer_lo", _vec(gd.outer_lo))),
            outer_hi=_parse_vec(get("geometry", "outer_hi", _vec(gd.outer_hi))),
            inner_lo=_parse_vec(get("geometry", "inner_lo", _vec(gd.inner_lo))),
            inner_hi=_parse_vec(get("geometry", "inner_hi", _vec(gd.inner_hi))),
            h0=float(get("geometry", "h0", gd.h0)),
        )
        faces = _parse_list(get("sources", "faces", "front"))
        omega = float(get("sources", "omega", base.sources[0].omega))
        comp = int(get("sources", "component", 2))
        amp = float(get("sources", "amplitude", 1.0))
        sources = tuple(
            SourceSpec(
                float(get("sources", f"omega_{i}", omega)),
                f,
                int(get("sources", f"component_{i}", comp)),
                float(get("sources", f"amplitude_{i}", amp)),
            )
            for i, f in enumerate(faces, start=1)
        )
        shared = _parse_list(get("observation", "faces", "front, back"))
        observe = tuple(
            _parse_list(get("observation", f"faces_{i}", ", ".join(shared))) for i in range(1, len(sources) + 1)
        )
        inv = InversionConfig(
            alpha=float(get("inversion", "alpha", base.inversion.alpha)),
            s=float(get("inversion", "s", 1.0)),
            delta=_opt(get("inversion", "delta", "auto")),
            eps_max=float(get("inversion", "eps_max", 5.0)),
            eps0=float(get("inversion", "eps0", 1.0)),
            bc_mode=get("inversion", "bc_mode", base.inversion.bc_mode).strip(),
            literal_divergence_term=_bool(get("inversion", "literal_divergence_term", "false")),
        )
        kind = get("phantom", "kind", "spheres").strip()
        spheres = tuple(
            Sphere(tuple(v[:3]), v[3], v[4]) for v in _parse_items(get("phantom", "spheres", ""), 5, "sphere")
        )
        gaussians = tuple(
            Gaussian(tuple(v[:3]), v[3], v[4]) for v in _parse_items(get("phantom", "gaussians", ""), 5, "gaussian")
        )
        noise = NoiseConfig(
            sigma=float(get("noise", "sigma", 0.0)),
            seed=int(get("noise", "seed", 1)),
            model=get("noise", "model", "additive").strip(),
        )
        cd = base.cg
        cg = CgSettings(
            theta=float(get("cg", "theta", cd.theta)),
            max_iter=int(get("cg", "max_iter", cd.max_iter)),
            stagnation_window=int(get("cg", "stagnation_window", cd.stagnation_window)),
            stagnation_rtol=float(get("cg", "stagnation_rtol", cd.stagnation_rtol)),
            safeguard=int(get("cg", "safeguard", cd.safeguard)),
        )
        ad = base.adaptive
        adaptive = AdaptiveSettings(
            variant=get("adaptive", "variant", ad.variant).strip(),
            beta=float(get("adaptive", "beta", ad.beta)),
            beta_tilde=float(get("adaptive", "beta_tilde", ad.beta_tilde)),
            theta1=float(get("adaptive", "theta1", ad.theta1)),
            theta2=float(get("adaptive", "theta2", ad.theta2)),
            max_levels=int(get("adaptive", "max_levels", ad.max_levels)),
            shift_coefficient=_bool(get("adaptive", "shift_coefficient", "false")),
        )
        cfg = ExperimentConfig(
            name=get("experiment", "name", base.name).strip(),
            geometry=geometry,
            sources=sources,
            observe=observe,
            t_final=float(get("time", "t_final", base.t_final)),
            dt=_opt(get("time", "dt", "auto")),
            inversion=inv,
            phantom=PhantomSpec(kind, gaussians, spheres),
            noise=noise,
            same_mesh=_bool(get("data", "same_mesh", "false")),
            cg=cg,
            adaptive=adaptive,
            output_dir=get("output", "directory", base.output_dir).strip(),
            write_vtk=_bool(get("output", "write_vtk", "true")),
        )
    except (ValueError, configparser.Error) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"invalid configuration: {exc}") from exc
    return cfg.validate()


def load(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def save(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(cfg))


# -- presets ----------------------------------------------------------------

TEST_CENTERS = {
    "test2": ((-0.3, 0.0, -0.25), (0.3, 0.2, -0.25), (0.3, -0.2, -0.25)),
    "test3": ((-0.3, 0.0, 0.25), (0.0, 0.2, 0.25), (0.0, -0.2, -0.25), (0.3, -0.2, -0.25)),
}
DESK_SPHERE_CENTER = (-0.3, 0.0, -0.25)


def preset(name: str, paper_scale: bool = False) -> ExperimentConfig:
    """Named experiment setups.

    ``desk-sphere`` and ``desk-gaussians`` are the fast desk configurations.
    ``test1`` .. ``test4`` are the four reference setups (two Gaussians;
    three and four inclusions with transmitted data; the four inclusions seen
    by two opposite sources with backscattered data). ``paper_scale`` applies
    :func:`apply_paper_scale`.
    """
    cfg = ExperimentConfig(name=name)
    sphere_d = 0.3
    if name == "desk-sphere":
        cfg.phantom = PhantomSpec("spheres", spheres=(Sphere(DESK_SPHERE_CENTER, sphere_d, 2.0),))
        cfg.noise = NoiseConfig(0.03, 1)
    elif name in ("desk-gaussians", "test1"):
        cfg.phantom = two_gaussians()
        cfg.noise = NoiseConfig(0.10, 1)
    elif name in ("test2", "test3"):
        cfg.phantom = PhantomSpec(
            "spheres", spheres=tuple(Sphere(c, sphere_d, 2.0) for c in TEST_CENTERS[name])
        )
        cfg.noise = NoiseConfig(0.10, 1)
        cfg.observe = (("back",),)
    elif name == "test4":
        cfg.phantom = PhantomSpec(
            "spheres", spheres=tuple(Sphere(c, sphere_d, 2.0) for c in TEST_CENTERS["test3"])
        )
        cfg.noise = NoiseConfig(0.10, 1)
        cfg.sources = (SourceSpec(5.0, "front"), SourceSpec(5.0, "back"))
        cfg.observe = (("front",), ("back",))
    else:
        raise ConfigurationError(f"unknown preset {name!r}")
    if paper_scale:
        cfg = apply_paper_scale(cfg)
    return cfg.validate()


def apply_paper_scale(cfg: ExperimentConfig) -> ExperimentConfig:
    """Full resolution: h0 = 0.05, omega = 40, dt = 0.006, alpha = 0.01, hybrid boundaries."""
    out = dataclasses.replace(cfg)
    out.geometry = dataclasses.replace(cfg.geometry, h0=0.05)
    out.sources = tuple(dataclasses.replace(s, omega=40.0) for s in cfg.sources)
    out.dt = 0.006
    out.inversion = dataclasses.replace(cfg.inversion, alpha=0.01, bc_mode="hybrid")
    out.adaptive = dataclasses.replace(cfg.adaptive, max_levels=5)
    out.phantom = _full_scale_inclusions(cfg.phantom)
    return out.validate()


def _full_scale_inclusions(ph: PhantomSpec) -> PhantomSpec:
    if ph.kind != "spheres":
        return ph
    # 2 mm inclusions on the decimetre scale
    return PhantomSpec("spheres", spheres=tuple(dataclasses.replace(s, diameter=0.02) for s in ph.spheres))

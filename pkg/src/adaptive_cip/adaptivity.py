"""Outer adaptive loop: reconstruct, estimate, mark, refine, transfer."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .discretization import PermittivityField
from .errors import ConfigurationError
from .estimator import ElementIndicator, Marking, coefficient_indicator, mark_elements, residual_indicator
from .mesh import TetMesh, interpolate_nodal, refine
from .objective import TikhonovParams, l2_norm, project_admissible
from .optimizer import CgSettings, CgState, run_cg
from .wavefield import BoundaryObservation, ObservationSurface, SourceSpec, TimeGrid, cfl_time_grid

log = logging.getLogger(__name__)

VARIANTS = ("first", "second")
STOP_REASONS = ("gradient_tol", "eps_change_tol", "max_levels")


@dataclass
class AdaptiveSettings:
    """Marking fractions and global stopping tolerances of the outer loop."""

    variant: str = "first"
    beta: float = 0.7
    beta_tilde: float = 0.7
    theta1: float = 0.0
    theta2: float = 0.0
    max_levels: int = 5
    shift_coefficient: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("beta", "beta_tilde"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ConfigurationError(f"{name} must lie in (0, 1)")
        if self.max_levels < 0:
            raise ConfigurationError("max_levels must be non-negative")


@dataclass
class LevelRecord:
    level: int
    n_tets: int
    n_vertices: int
    n_steps: int
    eps_change: float
    grad_norm: float
    min_grad_norm: float
    cg_iterations: int
    cg_stop: str
    eps_max: float
    n_marked: int = 0
    extra: dict = field(default_factory=dict)


@dataclass
class AdaptiveRun:
    meshes: list[TetMesh] = field(default_factory=list)
    eps_per_level: list[PermittivityField] = field(default_factory=list)
    grids: list[TimeGrid] = field(default_factory=list)
    indicators: list[ElementIndicator] = field(default_factory=list)
    markings: list[Marking] = field(default_factory=list)
    states: list[CgState] = field(default_factory=list)
    records: list[LevelRecord] = field(default_factory=list)
    stop_reason: str = ""
    warnings: list[str] = field(default_factory=list)

    @property
    def k_rec(self) -> int:
        return len(self.records) - 1

    @property
    def eps_rec(self) -> PermittivityField:
        return self.eps_per_level[-1]


def level_indicator(state: CgState, mesh: TetMesh, grid: TimeGrid, params: TikhonovParams, settings: AdaptiveSettings):
    """Indicator of the chosen variant from the last accepted CG iterate."""
    if settings.variant == "first":
        ev = state.evaluation
        return residual_indicator(ev.states, ev.adjoints, state.eps, params, mesh, grid), settings.beta
    ind = coefficient_indicator(state.eps, mesh, shift=settings.shift_coefficient)
    return ind, settings.beta_tilde


def run_adaptive(
    mesh: TetMesh,
    eps_init,
    data: Sequence[BoundaryObservation],
    sources: Sequence[SourceSpec],
    params: TikhonovParams,
    t_final: float,
    cg_settings: CgSettings,
    settings: AdaptiveSettings,
    *,
    dt: float | None = None,
    on_level: Callable[[int, TetMesh, PermittivityField, LevelRecord], None] | None = None,
) -> AdaptiveRun:
    """First (residual-driven) or second (coefficient-driven) adaptive algorithm.

    ``data`` are records on any observation surface covering the same faces;
    they are resampled onto each level's observation vertices and time grid.
    Level k stops the loop when some CG iterate has ``|R| < theta2``
    (``gradient_tol``), when ``|eps_k - eps_{k-1}| < theta1`` with the coarser
    field interpolated to level k (``eps_change_tol``; level 0 compares with
    the initial guess), or when ``k == max_levels``.
    """
    run = AdaptiveRun()
    eps = project_admissible(np.asarray(eps_init, float) if np.ndim(eps_init) else np.full(mesh.n_vertices, float(eps_init)), mesh, params.eps_max)
    previous = eps.values.copy()
    level = 0
    while True:
        grid = cfl_time_grid(mesh, t_final, params.eps_max, dt)
        level_data = [
            obs.resample(ObservationSurface.from_mesh(mesh, obs.surface.tags), grid.times) for obs in data
        ]
        state = run_cg(mesh, eps, level_data, sources, params, grid, cg_settings)
        change = l2_norm(state.eps.values - previous, mesh)
        rec = LevelRecord(
            level=level,
            n_tets=mesh.n_tets,
            n_vertices=mesh.n_vertices,
            n_steps=grid.n_steps,
            eps_change=change,
            grad_norm=state.grad.norm(),
            min_grad_norm=state.min_grad_norm,
            cg_iterations=state.iter,
            cg_stop=state.stop_reason,
            eps_max=float(state.eps.values.max()),
        )
        run.meshes.append(mesh)
        run.grids.append(grid)
        run.eps_per_level.append(state.eps)
        run.states.append(state)
        run.records.append(rec)
        if on_level is not None:
            on_level(level, mesh, state.eps, rec)
        if state.min_grad_norm < settings.theta2:
            run.stop_reason = "gradient_tol"
            break
        if change < settings.theta1:
            run.stop_reason = "eps_change_tol"
            break
        if level >= settings.max_levels:
            run.stop_reason = "max_levels"
            break
        indicator, beta = level_indicator(state, mesh, grid, params, settings)
        marking = mark_elements(indicator, beta)
        run.indicators.append(indicator)
        run.markings.append(marking)
        rec.n_marked = len(marking.elements)
        if marking.nothing_to_refine:
            msg = f"level {level}: indicator vanishes, nothing to refine"
            log.warning(msg)
            run.warnings.append(msg)
            run.stop_reason = "eps_change_tol"
            break
        finer = refine(mesh, marking.elements)
        transferred = interpolate_nodal(state.eps.values, mesh, finer)
        eps = project_admissible(transferred, finer, params.eps_max)
        previous = eps.values.copy()
        mesh = finer
        level += 1
    # keep state trajectories only for the final level to bound memory
    for st in run.states[:-1]:
        st.evaluation = None
    return run

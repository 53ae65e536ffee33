"""Tikhonov functional, its adjoint gradient and the admissible-set projection."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .discretization import (
    DiscreteOperators,
    PermittivityField,
    assemble_operators,
    eps_values,
    lumped_mass,
)
from .errors import ConfigurationError, MismatchError
from .mesh import TetMesh
from .wavefield import (
    BoundaryObservation,
    FieldTrajectory,
    SourceSpec,
    TimeGrid,
    misfit_weights,
    solve_adjoint,
    solve_direct,
)


@dataclass
class TikhonovParams:
    """Regularisation weight, background guess, cut-off width and gauge."""

    alpha: float = 0.01
    eps0: float | np.ndarray = 1.0
    delta: float | None = None
    s: float = 1.0
    eps_max: float = 5.0
    bc_mode: str = "hybrid"
    literal_divergence_term: bool = False

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigurationError("alpha must be positive")
        if self.s < 1:
            raise ConfigurationError("gauge parameter s must be >= 1")

    def cutoff(self, grid: TimeGrid) -> float:
        return 0.1 * grid.t_final if self.delta is None else self.delta


@dataclass
class GradientField:
    """Nodal L2 gradient ``R`` (lumped Riesz representative) and its dual vector."""

    values: np.ndarray
    dual: np.ndarray
    mesh: TetMesh

    def norm(self) -> float:
        return l2_norm(self.values, self.mesh)


def l2_inner(a: np.ndarray, b: np.ndarray, mesh: TetMesh) -> float:
    """Lumped-quadrature L2 inner product of two nodal scalar fields."""
    return float(np.sum(lumped_mass(mesh) * a * b))


def l2_norm(a: np.ndarray, mesh: TetMesh) -> float:
    return float(np.sqrt(max(l2_inner(a, a, mesh), 0.0)))


def _check_pair(trace: BoundaryObservation, G: BoundaryObservation, grid: TimeGrid):
    if trace.values.shape != G.values.shape:
        raise MismatchError(f"trace shape {trace.values.shape} != data shape {G.values.shape}")
    if not np.array_equal(trace.surface.vertex_ids, G.surface.vertex_ids):
        raise MismatchError("trace and data live on different observation faces")
    if len(trace.times) != grid.n_steps + 1 or not np.allclose(trace.times, G.times, rtol=0, atol=1e-12):
        raise MismatchError("trace and data use different time grids")


def data_misfit(trace: BoundaryObservation, G: BoundaryObservation, params: TikhonovParams, grid: TimeGrid) -> float:
    _check_pair(trace, G, grid)
    wz = misfit_weights(grid, params.cutoff(grid))
    r = trace.values - G.values
    return 0.5 * float(np.einsum("t,i,tic,tic->", wz, trace.surface.weights, r, r))


def regularization(mesh: TetMesh, eps, params: TikhonovParams) -> float:
    d = eps_values(eps, mesh) - eps_values(params.eps0, mesh)
    return 0.5 * params.alpha * float(np.sum(lumped_mass(mesh) * d * d))


def tikhonov_value(
    mesh: TetMesh,
    eps,
    observation_trace: BoundaryObservation | Sequence[BoundaryObservation],
    G: BoundaryObservation | Sequence[BoundaryObservation],
    params: TikhonovParams,
    grid: TimeGrid,
) -> float:
    """Half the weighted boundary misfit plus ``alpha/2 |eps - eps0|^2``.

    The boundary integral uses vertex-lumped face quadrature and the
    trapezoid rule in time; the volume term uses lumped quadrature. Several
    sources are summed with equal weights.
    """
    traces = [observation_trace] if isinstance(observation_trace, BoundaryObservation) else list(observation_trace)
    datas = [G] if isinstance(G, BoundaryObservation) else list(G)
    if len(traces) != len(datas):
        raise MismatchError("number of traces and data records differ")
    value = sum(data_misfit(t, g, params, grid) for t, g in zip(traces, datas))
    return value + regularization(mesh, eps, params)


def gradient_field(
    E_traj: FieldTrajectory | Sequence[FieldTrajectory],
    lambda_traj: FieldTrajectory | Sequence[FieldTrajectory],
    eps,
    params: TikhonovParams,
    grid: TimeGrid,
    ops: DiscreteOperators | None = None,
) -> GradientField:
    """Nodal gradient of the discrete Tikhonov functional.

    ``R = alpha (eps - eps0) - int dE/dt . dlam/dt + s int div(lam) [div E + grad(phi_j) . E]``

    tested against each hat function and divided by its lumped mass. The time
    derivative term is tested with the consistent mass, which is the exact
    derivative of the lumped eps-mass. The ``grad(phi_j) . E`` part comes from
    differentiating ``div(eps E)``; ``params.literal_divergence_term`` drops
    it. Values at frozen vertices are set to zero.
    """
    Es = [E_traj] if isinstance(E_traj, FieldTrajectory) else list(E_traj)
    Ls = [lambda_traj] if isinstance(lambda_traj, FieldTrajectory) else list(lambda_traj)
    if len(Es) != len(Ls) or not Es:
        raise MismatchError("need one adjoint trajectory per direct trajectory")
    mesh = Es[0].mesh
    e = eps_values(eps, mesh)
    if ops is None or ops.mesh is not mesh:
        ops = assemble_operators(mesh, e, params.s)
    m0 = ops.mass0
    dual = params.alpha * m0 * (e - eps_values(params.eps0, mesh))
    dt = grid.dt
    vol = mesh.volumes
    for E, L in zip(Es, Ls):
        if E.mesh is not mesh or L.mesh is not mesh:
            raise MismatchError("trajectories live on different meshes")
        if E.grid != grid or L.grid != grid:
            raise MismatchError("trajectories use a different time grid")
        vE = np.diff(E.levels, axis=0) / dt
        vL = np.diff(L.levels, axis=0) / dt
        a = dt * np.einsum("kic,kic->i", vE, vL)
        dual -= ops.mass_consistent0 @ a
        inner = slice(1, grid.n_steps)
        divE = ops.div(E.levels[inner])
        divL = ops.div(L.levels[inner])
        A = dt * np.einsum("nk,nk->k", divL, divE)
        contrib = np.repeat((vol * A / 4.0)[:, None], 4, axis=1)
        if not params.literal_divergence_term:
            steps = E.levels[inner]
            flat = steps.transpose(1, 0, 2).reshape(mesh.n_vertices, -1)
            Ebar = (ops.averaging @ flat).reshape(mesh.n_tets, -1, 3)  # (nt, n, 3)
            B = dt * np.einsum("nk,knc->kc", divL, Ebar)
            contrib = contrib + vol[:, None] * np.einsum("klc,kc->kl", mesh.grad_lambda, B)
        np.add.at(dual, mesh.tets.ravel(), params.s * contrib.ravel())
    dual = np.where(mesh.free_vertices, dual, 0.0)
    return GradientField(dual / m0, dual, mesh)


def project_admissible(field, mesh: TetMesh, eps_max: float) -> PermittivityField:
    """Clamp to ``[1, eps_max]`` and pin frozen vertices to 1."""
    v = np.clip(np.asarray(field, dtype=float), 1.0, eps_max)
    v = np.where(mesh.free_vertices, v, 1.0)
    return PermittivityField(v, mesh)


@dataclass
class Evaluation:
    """Objective value, gradient and the trajectories they came from."""

    value: float
    gradient: GradientField | None
    states: list[FieldTrajectory] = field(default_factory=list)
    adjoints: list[FieldTrajectory] = field(default_factory=list)
    traces: list[BoundaryObservation] = field(default_factory=list)


def evaluate(
    mesh: TetMesh,
    eps,
    data: Sequence[BoundaryObservation],
    sources: Sequence[SourceSpec],
    params: TikhonovParams,
    grid: TimeGrid,
    *,
    with_gradient: bool = True,
    enforce_cfl: bool = True,
) -> Evaluation:
    """Direct solves for every source, the objective and optionally the gradient."""
    if len(data) != len(sources):
        raise MismatchError("one data record is needed per source")
    e = eps_values(eps, mesh)
    ops = assemble_operators(mesh, e, params.s)
    delta = params.cutoff(grid)
    wz = misfit_weights(grid, delta)
    z2 = wz / np.where(grid.trapezoid_weights() > 0, grid.trapezoid_weights(), 1.0)
    states, adjoints, traces = [], [], []
    value = regularization(mesh, e, params)
    for src, G in zip(sources, data):
        E, trace = solve_direct(
            mesh, e, src, grid, params.bc_mode, observe=G.surface.tags, s=params.s,
            eps_max=params.eps_max, ops=ops, store=with_gradient, enforce_cfl=enforce_cfl,
        )
        value += data_misfit(trace, G, params, grid)
        traces.append(trace)
        if with_gradient:
            misfit = (trace.values - G.values) * z2[:, None, None]
            lam = solve_adjoint(
                mesh, e, misfit, trace.surface, grid, params.bc_mode, source=src, s=params.s,
                eps_max=params.eps_max, ops=ops, enforce_cfl=enforce_cfl,
            )
            states.append(E)
            adjoints.append(lam)
    grad = gradient_field(states, adjoints, e, params, grid, ops) if with_gradient else None
    return Evaluation(value, grad, states, adjoints, traces)

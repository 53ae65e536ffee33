"""Computable a posteriori indicators and element marking.

All space-dependent quantities on a time interval ``(t_k, t_{k+1})`` are taken
from the interval-midpoint fields ``(u^k + u^{k+1}) / 2``. Per-vertex factors
are integrated over an element with the lumped rule ``|K| / 4`` per vertex,
and over an interval with weight ``dt``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .discretization import (
    assemble_operators,
    element_gradient,
    eps_values,
    face_jump_normal,
    face_jumps,
    time_jump,
    time_jump_vector,
)
from .errors import MismatchError
from .mesh import TetMesh, mesh_function
from .wavefield import FieldTrajectory, TimeGrid

log = logging.getLogger(__name__)


@dataclass
class ElementIndicator:
    """Non-negative value per tet.

    ``integral`` holds the element-integrated version where it differs from
    ``values`` (the residual indicator), otherwise it equals ``values``.
    """

    values: np.ndarray
    kind: str
    mesh: TetMesh
    integral: np.ndarray | None = None

    def __post_init__(self):
        if self.integral is None:
            self.integral = self.values

    @property
    def total(self) -> float:
        return float(self.integral.sum())

    @property
    def max(self) -> float:
        return float(self.values.max()) if self.values.size else 0.0


@dataclass
class Marking:
    elements: np.ndarray
    threshold: float
    nothing_to_refine: bool


def _pairs(E_traj, lambda_traj):
    Es = [E_traj] if isinstance(E_traj, FieldTrajectory) else list(E_traj)
    Ls = [lambda_traj] if isinstance(lambda_traj, FieldTrajectory) else list(lambda_traj)
    if len(Es) != len(Ls):
        raise MismatchError("need one adjoint trajectory per direct trajectory")
    for E, L in zip(Es, Ls):
        if E.mesh is not L.mesh or E.grid != L.grid:
            raise MismatchError("direct and adjoint trajectories must share mesh and grid")
    return Es, Ls


def _midpoints(levels: np.ndarray) -> np.ndarray:
    return 0.5 * (levels[1:] + levels[:-1])


def eta_indicator(E_traj, lambda_traj, eps, mesh: TetMesh, grid: TimeGrid, s: float = 1.0) -> ElementIndicator:
    """Per-element solution indicator built from spatial and temporal jumps.

    On each interval and at each vertex i of K the integrand is::

        (|[lam_t]_t| / dt + s |div lam|) (h |[E_n]_s| + dt |[E_t]_t|)
      + |[E_t]_t| / dt (h |[lam_n]_s| + dt |[lam_t]_t|)
      + s |div lam| (|[E_n]_s| + dt |[(div E)_t]_t|)
      + s (|div E| + |E|) (|[lam_n]_s| + dt |[(div lam)_t]_t|)

    where ``[.]_s`` is the maximal normal-derivative jump over the faces of K
    and ``[.]_t`` the maximal jump of the time quotient at the interval ends.
    Several sources add up.
    """
    Es, Ls = _pairs(E_traj, lambda_traj)
    ops = assemble_operators(mesh, eps_values(eps, mesh), s)
    dt = grid.dt
    h = mesh_function(mesh)
    q = mesh.volumes / 4.0
    tets = mesh.tets
    eta = np.zeros(mesh.n_tets)
    for E, L in zip(Es, Ls):
        if E.mesh is not mesh or E.grid != grid:
            raise MismatchError("trajectories do not match the mesh or time grid")
        jEt = time_jump_vector(E.levels, dt)  # (N, n)
        jLt = time_jump_vector(L.levels, dt)
        jdivEt = time_jump(ops.div(E.levels), dt)  # (N, nt)
        jdivLt = time_jump(ops.div(L.levels), dt)
        Em = _midpoints(E.levels)
        Lm = _midpoints(L.levels)
        for k in range(grid.n_steps):
            divE = np.abs(ops.div(Em[k]))
            divL = np.abs(ops.div(Lm[k]))
            jEn = face_jump_normal(element_gradient(mesh, Em[k]), mesh)
            jLn = face_jump_normal(element_gradient(mesh, Lm[k]), mesh)
            eT = jEt[k][tets]  # (nt, 4)
            lT = jLt[k][tets]
            absE = np.linalg.norm(Em[k], axis=1)[tets]
            t1 = (lT / dt + s * divL[:, None]) * (h[:, None] * jEn[:, None] + dt * eT)
            t2 = (eT / dt) * (h[:, None] * jLn[:, None] + dt * lT)
            t3 = s * divL * (jEn + dt * jdivEt[k])
            t4 = s * (divE[:, None] + absE) * (jLn + dt * jdivLt[k])[:, None]
            eta += dt * q * (t1 + t2 + t4).sum(axis=1) + dt * mesh.volumes * t3
    return ElementIndicator(eta, "eta", mesh)


def residual_indicator(E_traj, lambda_traj, eps, params, mesh: TetMesh, grid: TimeGrid) -> ElementIndicator:
    """Per-element magnitude of the coefficient residual with its face-jump term.

    The nodal part is ``r_i = alpha (eps - eps0)_i - sum_k dt (dE/dt . dlam/dt)_i``.
    The face part of K is ``s / (2 h_K) * sum_k dt * max_f |div lam_K - div lam_K'| max_{v in f} |n_f . E_v|``
    over interior faces f. ``values[K]`` is the mean of ``|r_i + J_K|`` over the
    vertices of K and ``integral[K] = |K| values[K]``. Elements whose centroid
    lies outside the inner box get 0.
    """
    Es, Ls = _pairs(E_traj, lambda_traj)
    e = eps_values(eps, mesh)
    ops = assemble_operators(mesh, e, params.s)
    dt = grid.dt
    h = mesh_function(mesh)
    r = params.alpha * (e - eps_values(params.eps0, mesh))
    J = np.zeros(mesh.n_tets)
    interior = np.flatnonzero(mesh.face_neighbor >= 0)
    normals = mesh.face_normals
    fv = mesh.faces
    for E, L in zip(Es, Ls):
        if E.mesh is not mesh or E.grid != grid:
            raise MismatchError("trajectories do not match the mesh or time grid")
        r = r - dt * np.einsum("kic,kic->i", E.velocity(), L.velocity())
        Em = _midpoints(E.levels)
        Lm = _midpoints(L.levels)
        for k in range(grid.n_steps):
            jd = face_jumps(ops.div(Lm[k]), mesh)
            nE = np.zeros(len(fv))
            nE[interior] = np.abs(np.einsum("fvc,fc->fv", Em[k][fv[interior]], normals[interior])).max(axis=1)
            J += dt * (jd * nE)[mesh.tet_faces].max(axis=1)
    J *= params.s / (2.0 * h)
    values = np.abs(r[mesh.tets] + J[:, None]).mean(axis=1)
    values = np.where(mesh.inner_tets, values, 0.0)
    return ElementIndicator(values, "residual", mesh, values * mesh.volumes)


def coefficient_indicator(eps, mesh: TetMesh, *, exclude_exterior: bool = True, shift: bool = False) -> ElementIndicator:
    """Per-tet maximum of ``|eps|`` (or ``|eps - 1|`` with ``shift``) over its vertices."""
    e = eps_values(eps, mesh)
    v = np.abs(e - 1.0) if shift else np.abs(e)
    values = v[mesh.tets].max(axis=1)
    if exclude_exterior:
        values = np.where(mesh.inner_tets, values, 0.0)
    return ElementIndicator(values, "coefficient_magnitude", mesh)


def mark_elements(indicator: ElementIndicator | np.ndarray, beta: float) -> Marking:
    """Elements with ``indicator >= beta * max(indicator)``."""
    if not 0 < beta < 1:
        raise ValueError(f"marking fraction must lie in (0, 1), got {beta}")
    values = indicator.values if isinstance(indicator, ElementIndicator) else np.asarray(indicator, float)
    if values.size == 0:
        raise MismatchError("indicator is empty")
    top = float(values.max())
    if not top > 0:
        log.info("indicator is identically zero: nothing to refine")
        return Marking(np.array([], dtype=np.int64), 0.0, True)
    threshold = beta * top
    return Marking(np.flatnonzero(values >= threshold), threshold, False)

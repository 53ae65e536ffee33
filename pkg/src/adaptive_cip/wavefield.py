"""Explicit leapfrog solvers for the direct and adjoint wave problems.

Both solvers share :func:`leapfrog`. The adjoint is the exact discrete
transpose of the direct scheme, so the gradient assembled from the two
trajectories is the derivative of the fully discrete objective.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .discretization import DiscreteOperators, assemble_operators, eps_values
from .errors import ConfigurationError, DivergenceError, MismatchError, StabilityError
from .mesh import TAG_CODES, TetMesh, mesh_function

BC_MODES = ("hybrid", "neumann", "absorbing")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of ``[0, t_final]`` into ``n_steps`` intervals."""

    t_final: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1 or self.t_final <= 0:
            raise ConfigurationError("time grid needs t_final > 0 and n_steps >= 1")

    @property
    def dt(self) -> float:
        return self.t_final / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.n_steps + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w


def cfl_limit(mesh: TetMesh, eps_max: float, safety: float = 0.5) -> float:
    """Largest admissible step ``safety * h_min / sqrt(3 eps_max)``."""
    return safety * float(mesh_function(mesh).min()) / math.sqrt(3.0 * eps_max)


def cfl_time_grid(mesh: TetMesh, t_final: float, eps_max: float, dt: float | None = None) -> TimeGrid:
    """Time grid with the requested ``dt`` reduced as needed to satisfy the CFL rule."""
    limit = cfl_limit(mesh, eps_max)
    target = limit if dt is None else min(dt, limit)
    n = int(math.ceil(t_final / target - 1e-9))
    return TimeGrid(t_final, max(n, 1))


def check_cfl(mesh: TetMesh, grid: TimeGrid, eps_max: float) -> None:
    limit = cfl_limit(mesh, eps_max)
    if grid.dt > limit * (1 + 1e-12):
        raise StabilityError(f"time step {grid.dt:.6g} exceeds the CFL limit {limit:.6g}")


def plane_wave_pulse(omega: float, t):
    """One period of ``sin(omega t)``; zero outside ``(0, 2 pi / omega)``."""
    t = np.asarray(t, dtype=float)
    active = (t > 0) & (t < 2 * np.pi / omega)
    out = np.where(active, np.sin(omega * t), 0.0)
    return out if out.ndim else float(out)


def cutoff_zdelta(t, T: float, delta: float):
    """Data cut-off: 1 up to ``T - delta``, 0 from ``T - delta/2``, quintic smoothstep between."""
    if not 0 < delta < T:
        raise ConfigurationError(f"cut-off width must satisfy 0 < delta < T, got delta={delta}, T={T}")
    t = np.asarray(t, dtype=float)
    x = np.clip((t - (T - delta)) / (0.5 * delta), 0.0, 1.0)
    smooth = x**3 * (10 - 15 * x + 6 * x**2)
    out = 1.0 - smooth
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SourceSpec:
    """Plane-wave boundary pulse driving one field component (1-based)."""

    omega: float
    face: str = "front"
    component: int = 2
    amplitude: float = 1.0

    def __post_init__(self):
        if self.omega <= 0:
            raise ConfigurationError("source frequency must be positive")
        if self.face not in ("front", "back"):
            raise ConfigurationError(f"illumination face must be front or back, got {self.face!r}")
        if self.component not in (1, 2, 3):
            raise ConfigurationError("driven component must be 1, 2 or 3")

    @property
    def window(self) -> tuple[float, float]:
        return 0.0, 2 * np.pi / self.omega

    def value(self, t):
        return self.amplitude * plane_wave_pulse(self.omega, t)


@dataclass
class FieldTrajectory:
    """Nodal vector fields at every time node, ``levels[k]`` of shape (n, 3)."""

    levels: np.ndarray
    grid: TimeGrid
    kind: str
    mesh: TetMesh

    def __post_init__(self):
        if self.levels.shape[0] != self.grid.n_steps + 1:
            raise MismatchError("trajectory length does not match its time grid")

    def velocity(self) -> np.ndarray:
        """Per-interval difference quotients, shape (N, n, 3)."""
        return np.diff(self.levels, axis=0) / self.grid.dt


@dataclass(frozen=True)
class ObservationSurface:
    """Vertices and lumped quadrature weights of a set of tagged boundary faces."""

    tags: tuple[str, ...]
    vertex_ids: np.ndarray
    weights: np.ndarray
    triangles: np.ndarray  # local indices into vertex_ids
    points: np.ndarray

    @classmethod
    def from_mesh(cls, mesh: TetMesh, tags: Sequence[str]) -> "ObservationSurface":
        tags = tuple(tags)
        if not tags:
            raise ConfigurationError("at least one observation face is required")
        faces = np.concatenate([mesh.tagged_faces(t) for t in tags])
        tri = mesh.faces[faces]
        vids, local = np.unique(tri, return_inverse=True)
        w = mesh.face_vertex_weights(faces)[vids]
        return cls(tags, vids, w, local.reshape(-1, 3), mesh.vertices[vids])


@dataclass
class BoundaryObservation:
    """Time-resolved field samples at the vertices of observation faces.

    ``values`` has shape (N+1, m, 3) over the time nodes ``times``.
    """

    surface: ObservationSurface
    times: np.ndarray
    values: np.ndarray
    source_id: int = 0

    def resample(self, surface: ObservationSurface, times: np.ndarray) -> "BoundaryObservation":
        """P1 evaluation on the face triangles plus linear interpolation in time."""
        from .experiment import surface_interpolation_matrix

        P = surface_interpolation_matrix(self.surface, surface.points)
        nt, ms, _ = self.values.shape
        flat = self.values.transpose(1, 0, 2).reshape(ms, -1)
        spatial = (P @ flat).reshape(len(surface.points), nt, 3).transpose(1, 0, 2)
        t_src = self.times
        idx = np.clip(np.searchsorted(t_src, times, side="right") - 1, 0, len(t_src) - 2)
        theta = (times - t_src[idx]) / (t_src[idx + 1] - t_src[idx])
        theta = np.clip(theta, 0.0, 1.0)[:, None, None]
        vals = (1 - theta) * spatial[idx] + theta * spatial[idx + 1]
        return BoundaryObservation(surface, np.asarray(times, float), vals, self.source_id)


def _face_weights(mesh: TetMesh, tags) -> np.ndarray:
    faces = np.concatenate([mesh.tagged_faces(t) for t in tags]) if tags else np.array([], int)
    return mesh.face_vertex_weights(faces)


class BoundaryDamping:
    """Absorbing-boundary mass ``C^n`` (lumped, per vertex) at each time node.

    ``hybrid``: first-order absorbing ``dE/dt + dE/dn = 0`` on the front and
    back faces, except on the illumination face while the pulse is active;
    lateral faces keep ``dE/dn = 0`` so a plane wave passes undistorted.
    ``absorbing``: the same but with the lateral faces absorbing too.
    ``neumann``: no damping anywhere.
    """

    def __init__(self, mesh: TetMesh, grid: TimeGrid, bc_mode: str, source: SourceSpec | None):
        if bc_mode not in BC_MODES:
            raise ConfigurationError(f"unknown boundary mode {bc_mode!r}")
        self.mode = bc_mode
        n = mesh.n_vertices
        if bc_mode == "neumann":
            self.always = np.zeros(n)
            self.during = np.zeros(n)
            self.window_end = -1.0
        else:
            faces = ("front", "back", "lateral") if bc_mode == "absorbing" else ("front", "back")
            self.always = _face_weights(mesh, faces)
            if source is None:
                self.during = self.always
                self.window_end = -1.0
            else:
                self.during = _face_weights(mesh, tuple(t for t in faces if t != source.face))
                self.window_end = source.window[1]
        self.times = grid.times

    def __call__(self, k: int) -> np.ndarray:
        if k < 0 or k >= len(self.times):
            return self.always
        return self.during if self.times[k] <= self.window_end else self.always

    @property
    def is_zero(self) -> bool:
        return not (self.always.any() or self.during.any())


def leapfrog(
    ops: DiscreteOperators,
    grid: TimeGrid,
    load: Callable[[int], np.ndarray | None],
    damping: BoundaryDamping,
    *,
    transpose: bool = False,
    store: bool = True,
    on_step: Callable[[int, np.ndarray], None] | None = None,
) -> np.ndarray | None:
    """Run the lumped-mass leapfrog scheme.

    Forward (``transpose=False``), for n = 1..N-1::

        M (E^{n+1} - 2E^n + E^{n-1}) / dt^2 + C^n (E^{n+1} - E^{n-1}) / (2 dt) + K E^n = b^n

    with ``E^0 = E^1 = 0``. Transposed, for m = N..2 and ``L^N = L^{N+1} = 0``::

        M (L^{m-1} - 2L^m + L^{m+1}) / dt^2
            + (C^{m-1} L^{m-1} - C^{m+1} L^{m+1}) / (2 dt) + K^T L^m = b^m

    which is the exact transpose of the forward recursion. ``load(k)`` returns
    ``b^k`` as (n, 3) or ``None`` for zero.
    """
    N = grid.n_steps
    dt = grid.dt
    n = ops.mesh.n_vertices
    m = ops.mass[:, None] / dt**2
    apply = ops.apply_transpose if transpose else ops.apply
    out = np.zeros((N + 1, n, 3)) if store else None
    prev = np.zeros((n, 3))
    cur = np.zeros((n, 3))
    if on_step is not None:
        if transpose:
            on_step(N, cur)
        else:
            on_step(0, prev)
            on_step(1, cur)
    steps = range(N, 1, -1) if transpose else range(1, N)
    for k in steps:
        if transpose:
            c_new = damping(k - 1)[:, None] / (2 * dt)
            c_old = damping(k + 1)[:, None] / (2 * dt)
        else:
            c_new = damping(k)[:, None] / (2 * dt)
            c_old = c_new
        rhs = m * (2 * cur - prev) + c_old * prev - apply(cur)
        b = load(k)
        if b is not None:
            rhs += b
        with np.errstate(over="ignore", invalid="ignore"):
            nxt = rhs / (m + c_new)
        if not np.all(np.isfinite(nxt)):
            raise DivergenceError(f"non-finite field at time step {k}", step=k)
        prev, cur = cur, nxt
        idx = k - 1 if transpose else k + 1
        if store:
            out[idx] = cur
        if on_step is not None:
            on_step(idx, cur)
    return out


def source_load(mesh: TetMesh, source: SourceSpec, grid: TimeGrid) -> Callable[[int], np.ndarray | None]:
    """Boundary functional of the pulse on the illumination face."""
    w = _face_weights(mesh, (source.face,))
    values = source.value(grid.times)
    comp = source.component - 1

    def load(k):
        if values[k] == 0.0:
            return None
        b = np.zeros((mesh.n_vertices, 3))
        b[:, comp] = values[k] * w
        return b

    return load


def solve_direct(
    mesh: TetMesh,
    eps,
    source: SourceSpec,
    grid: TimeGrid,
    bc_mode: str = "hybrid",
    *,
    observe: Sequence[str] = ("front",),
    s: float = 1.0,
    eps_max: float = 5.0,
    ops: DiscreteOperators | None = None,
    store: bool = True,
    enforce_cfl: bool = True,
):
    """Direct solve with zero initial data.

    Returns ``(trajectory, observation)``. The trajectory is ``None`` when
    ``store`` is False; the observation is always recorded.
    """
    if ops is None:
        ops = assemble_operators(mesh, eps, s)
    elif ops.mesh is not mesh:
        raise MismatchError("operators were assembled on a different mesh")
    if enforce_cfl:
        check_cfl(mesh, grid, eps_max)
    surface = ObservationSurface.from_mesh(mesh, observe)
    record = np.zeros((grid.n_steps + 1, len(surface.vertex_ids), 3))

    def keep(k, field):
        record[k] = field[surface.vertex_ids]

    damping = BoundaryDamping(mesh, grid, bc_mode, source)
    levels = leapfrog(ops, grid, source_load(mesh, source, grid), damping, store=store, on_step=keep)
    traj = FieldTrajectory(levels, grid, "direct", mesh) if store else None
    return traj, BoundaryObservation(surface, grid.times.copy(), record)


def misfit_weights(grid: TimeGrid, delta: float) -> np.ndarray:
    """Trapezoid weights times ``z_delta^2`` at every time node."""
    z = cutoff_zdelta(grid.times, grid.t_final, delta)
    return grid.trapezoid_weights() * z**2


def solve_adjoint(
    mesh: TetMesh,
    eps,
    misfit: np.ndarray,
    surface: ObservationSurface,
    grid: TimeGrid,
    bc_mode: str = "hybrid",
    *,
    source: SourceSpec | None = None,
    s: float = 1.0,
    eps_max: float = 5.0,
    ops: DiscreteOperators | None = None,
    time_weights: np.ndarray | None = None,
    enforce_cfl: bool = True,
) -> FieldTrajectory:
    """Backward solve driven by ``misfit = (E - G) z_delta^2`` on the observation faces.

    The boundary load at node m is ``-(w_m / dt) W misfit_m`` where ``w`` are
    the trapezoid weights (``time_weights`` overrides them) and ``W`` the
    lumped face weights. ``source`` selects the same boundary damping as the
    direct solve it is paired with.
    """
    if ops is None:
        ops = assemble_operators(mesh, eps, s)
    if enforce_cfl:
        check_cfl(mesh, grid, eps_max)
    misfit = np.asarray(misfit, dtype=float)
    if misfit.shape != (grid.n_steps + 1, len(surface.vertex_ids), 3):
        raise MismatchError(
            f"misfit shape {misfit.shape} does not match grid/surface "
            f"({grid.n_steps + 1}, {len(surface.vertex_ids)}, 3)"
        )
    w = grid.trapezoid_weights() if time_weights is None else np.asarray(time_weights, float)
    scale = -(w / grid.dt)

    def load(k):
        if not misfit[k].any():
            return None
        b = np.zeros((mesh.n_vertices, 3))
        b[surface.vertex_ids] = scale[k] * surface.weights[:, None] * misfit[k]
        return b

    damping = BoundaryDamping(mesh, grid, bc_mode, source)
    levels = leapfrog(ops, grid, load, damping, transpose=True)
    return FieldTrajectory(levels, grid, "adjoint", mesh)


def discrete_energy(levels: np.ndarray, ops: DiscreteOperators, dt: float) -> np.ndarray:
    """``0.5 |(E^{n+1}-E^n)/dt|_M^2 + 0.5 <K E^n, E^{n+1}>`` for n = 0..N-1."""
    vel = np.diff(levels, axis=0) / dt
    kin = 0.5 * np.einsum("nic,i,nic->n", vel, ops.mass, vel)
    pot = np.array([0.5 * np.vdot(ops.apply(levels[k]), levels[k + 1]) for k in range(len(levels) - 1)])
    return kin + pot

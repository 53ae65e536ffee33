"""Phantoms, synthetic data, noise and reconstruction metrics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .discretization import PermittivityField, eps_values, lumped_mass
from .errors import ConfigurationError, GeometryError
from .mesh import Box, TetMesh, refine_uniform
from .objective import project_admissible
from .wavefield import (
    BoundaryObservation,
    ObservationSurface,
    SourceSpec,
    TimeGrid,
    cfl_limit,
    solve_direct,
)

GAUSSIAN_WIDTH = 0.2


@dataclass(frozen=True)
class Gaussian:
    center: tuple[float, float, float]
    amplitude: float = 1.0
    width: float = GAUSSIAN_WIDTH

    def __call__(self, x: np.ndarray) -> np.ndarray:
        r2 = np.sum((x - np.asarray(self.center)) ** 2, axis=1)
        return self.amplitude * np.exp(-r2 / self.width)


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    diameter: float
    contrast: float = 2.0

    def inside(self, x: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(x - np.asarray(self.center), axis=1)
        return r <= 0.5 * self.diameter + 1e-12


@dataclass(frozen=True)
class PhantomSpec:
    """Analytic permittivity: background 1 plus Gaussian bumps or constant spheres."""

    kind: str = "gaussians"
    gaussians: tuple[Gaussian, ...] = ()
    spheres: tuple[Sphere, ...] = ()

    def __post_init__(self):
        if self.kind not in ("gaussians", "spheres"):
            raise ConfigurationError(f"unknown phantom kind {self.kind!r}")

    @property
    def centers(self) -> list[tuple[float, float, float]]:
        items = self.gaussians if self.kind == "gaussians" else self.spheres
        return [tuple(item.center) for item in items]

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.ones(len(x))
        if self.kind == "gaussians":
            for g in self.gaussians:
                out = out + g(x)
        else:
            for sph in self.spheres:
                out = np.where(sph.inside(x), np.maximum(out, sph.contrast), out)
        return out


def two_gaussians() -> PhantomSpec:
    """Superposition of two unit Gaussians at (0.3, 0, 0) and (-0.4, 0.2, 0)."""
    return PhantomSpec(
        "gaussians",
        gaussians=(Gaussian((0.3, 0.0, 0.0)), Gaussian((-0.4, 0.2, 0.0))),
    )


def synthesize_phantom(spec: PhantomSpec, mesh: TetMesh, eps_max: float = 5.0) -> PermittivityField:
    """Sample the phantom at the mesh vertices and project onto the admissible set."""
    centers = spec.centers
    if centers and not np.all(mesh.inner_box.contains(np.asarray(centers))):
        raise ConfigurationError("phantom centre lies outside the inner box")
    return project_admissible(spec.evaluate(mesh.vertices), mesh, eps_max)


def surface_interpolation_matrix(src: ObservationSurface, points: np.ndarray, tol: float = 1e-9) -> sp.csr_matrix:
    """Sparse matrix evaluating P1 surface data of ``src`` at ``points`` on the same faces."""
    points = np.atleast_2d(points)
    m = len(points)
    scale = max(1.0, float(np.abs(src.points).max()))
    dist, nearest = cKDTree(src.points).query(points)
    rows, cols, vals = [], [], []
    same = dist <= 1e-12 * scale
    rows.append(np.flatnonzero(same))
    cols.append(nearest[same])
    vals.append(np.ones(int(same.sum())))
    rest = np.flatnonzero(~same)
    if rest.size:
        tri = src.triangles
        a = src.points[tri[:, 0]]
        e1 = src.points[tri[:, 1]] - a
        e2 = src.points[tri[:, 2]] - a
        tree = cKDTree(a + (e1 + e2) / 3.0)
        k = min(16, len(tri))
        _, cand = tree.query(points[rest], k=k)
        cand = cand.reshape(len(rest), -1)
        best = np.full(len(rest), -np.inf)
        choice = np.zeros((len(rest), 3))
        chosen = np.zeros(len(rest), dtype=np.int64)
        for j in range(cand.shape[1]):
            c = cand[:, j]
            d = points[rest] - a[c]
            g11 = np.einsum("ij,ij->i", e1[c], e1[c])
            g12 = np.einsum("ij,ij->i", e1[c], e2[c])
            g22 = np.einsum("ij,ij->i", e2[c], e2[c])
            r1 = np.einsum("ij,ij->i", d, e1[c])
            r2 = np.einsum("ij,ij->i", d, e2[c])
            det = g11 * g22 - g12**2
            u = (g22 * r1 - g12 * r2) / det
            v = (g11 * r2 - g12 * r1) / det
            off = np.linalg.norm(d - u[:, None] * e1[c] - v[:, None] * e2[c], axis=1)
            lam = np.column_stack([1 - u - v, u, v])
            score = np.where(off <= tol * scale, lam.min(axis=1), -np.inf)
            better = score > best
            best[better] = score[better]
            choice[better] = lam[better]
            chosen[better] = c[better]
        if np.any(best < -tol):
            bad = points[rest[np.argmin(best)]]
            raise GeometryError(f"observation point {bad} is not on the source observation faces")
        rows.append(np.repeat(rest, 3))
        cols.append(tri[chosen].ravel())
        vals.append(choice.ravel())
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(m, len(src.points)),
    )


def data_time_grid(gen_mesh: TetMesh, grid: TimeGrid, eps_max: float) -> TimeGrid:
    """Smallest subdivision ``k >= 2`` of ``grid`` that is CFL-stable on ``gen_mesh``.

    An integer ratio keeps every inversion time node on the data grid.
    """
    limit = cfl_limit(gen_mesh, eps_max)
    k = max(2, int(np.ceil(grid.dt / limit - 1e-12)))
    return TimeGrid(grid.t_final, k * grid.n_steps)


def generate_data(
    mesh: TetMesh,
    phantom: PhantomSpec,
    sources: Sequence[SourceSpec],
    grid: TimeGrid,
    observe: Sequence[Sequence[str]],
    *,
    bc_mode: str = "hybrid",
    s: float = 1.0,
    eps_max: float = 5.0,
    same_mesh: bool = False,
) -> list[BoundaryObservation]:
    """Clean boundary records, one per source.

    Unless ``same_mesh`` is set the direct problem is solved on ``mesh``
    refined once globally with at most half the time step, so the records never
    come from the inversion discretisation. The returned records live on
    the generating mesh; use :meth:`BoundaryObservation.resample` to move
    them to an inversion mesh.
    """
    if same_mesh:
        gen_mesh, gen_grid = mesh, grid
    else:
        gen_mesh = refine_uniform(mesh)
        gen_grid = data_time_grid(gen_mesh, grid, eps_max)
    eps = synthesize_phantom(phantom, gen_mesh, eps_max)
    out = []
    for i, (src, tags) in enumerate(zip(sources, observe)):
        _, obs = solve_direct(
            gen_mesh, eps, src, gen_grid, bc_mode, observe=tuple(tags), s=s, eps_max=eps_max, store=False
        )
        obs.source_id = i
        out.append(obs)
    return out


def add_noise(obs: BoundaryObservation, sigma: float, seed: int, model: str = "additive") -> BoundaryObservation:
    """Perturb every sample by ``sigma * A * u`` with ``u ~ U[-1, 1]``.

    ``A`` is the record's maximal absolute value for the ``additive`` model;
    ``relative`` scales each sample by its own magnitude instead.
    """
    if sigma < 0:
        raise ConfigurationError("noise level must be non-negative")
    if sigma == 0:
        return BoundaryObservation(obs.surface, obs.times.copy(), obs.values.copy(), obs.source_id)
    rng = np.random.default_rng([int(seed), int(obs.source_id)])
    u = rng.uniform(-1.0, 1.0, size=obs.values.shape)
    if model == "additive":
        scale = float(np.abs(obs.values).max())
    elif model == "relative":
        scale = np.abs(obs.values)
    else:
        raise ConfigurationError(f"unknown noise model {model!r}")
    return BoundaryObservation(obs.surface, obs.times.copy(), obs.values + sigma * scale * u, obs.source_id)


def relative_error(eps_true, eps_rec, mesh: TetMesh, region: str = "inner") -> float:
    """``|eps_true - eps_rec| / |eps_rec|`` in lumped L2.

    ``region="inner"`` integrates over the tetrahedra whose centroid lies in
    the inner box (where the coefficient is reconstructed); ``"all"`` uses the
    whole mesh.
    """
    a = eps_values(eps_true, mesh)
    b = eps_values(eps_rec, mesh)
    if region == "all":
        w = lumped_mass(mesh)
    elif region == "inner":
        keep = mesh.inner_tets
        w = np.bincount(
            mesh.tets[keep].ravel(), weights=np.repeat(mesh.volumes[keep] / 4.0, 4), minlength=mesh.n_vertices
        )
    else:
        raise ConfigurationError(f"unknown region {region!r}")
    return float(np.sqrt(np.sum(w * (a - b) ** 2) / np.sum(w * b**2)))

"""Piecewise-linear finite element operators for the gauged Maxwell system.

Vector fields are stored as ``(n_vertices, 3)`` arrays. Flattened vectors use
the interleaved layout ``3 * vertex + component``.

The spatial form is

    (grad E, grad phi) - (div E, div phi) + s (div(eps E), div phi)

with ``div(eps E) = eps div E + grad(eps) . E`` evaluated at the element
barycentre (one-point rule), so every element contributes a constant.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, MismatchError
from .mesh import TetMesh


@dataclass(eq=False)
class PermittivityField:
    """Nodal P1 permittivity on a specific mesh."""

    values: np.ndarray
    mesh: TetMesh

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_vertices,):
            raise MismatchError(
                f"permittivity has {self.values.shape} values, mesh has {self.mesh.n_vertices} vertices"
            )

    def is_admissible(self, eps_max: float, tol: float = 1e-12) -> bool:
        v = self.values
        frozen = ~self.mesh.free_vertices
        return bool(
            np.all(np.isfinite(v))
            and np.all(v >= 1 - tol)
            and np.all(v <= eps_max + tol)
            and np.all(np.abs(v[frozen] - 1) <= tol)
        )


def eps_values(eps, mesh: TetMesh) -> np.ndarray:
    """Nodal values of ``eps`` after checking it lives on ``mesh``."""
    if isinstance(eps, PermittivityField):
        if eps.mesh is not mesh and eps.mesh.uid != mesh.uid:
            raise MismatchError("permittivity field lives on a different mesh")
        return eps.values
    values = np.asarray(eps, dtype=float)
    if np.ndim(values) == 0:
        return np.full(mesh.n_vertices, float(values))
    if values.shape != (mesh.n_vertices,):
        raise MismatchError(
            f"permittivity has {values.shape} values, mesh has {mesh.n_vertices} vertices"
        )
    return values


def _scatter_matrix(mesh: TetMesh, data: np.ndarray) -> sp.csr_matrix:
    """(nt, 3n) matrix with entry ``data[K, l, c]`` at column ``3*tets[K,l]+c``."""
    nt = mesh.n_tets
    rows = np.repeat(np.arange(nt), 12)
    cols = (3 * mesh.tets[:, :, None] + np.arange(3)).reshape(-1)
    return sp.csr_matrix((data.reshape(-1), (rows, cols)), shape=(nt, 3 * mesh.n_vertices))


def scalar_stiffness(mesh: TetMesh) -> sp.csr_matrix:
    g = mesh.grad_lambda
    local = np.einsum("kaj,kbj->kab", g, g) * mesh.volumes[:, None, None]
    rows = np.repeat(mesh.tets, 4, axis=1).ravel()
    cols = np.tile(mesh.tets, (1, 4)).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def consistent_mass(mesh: TetMesh) -> sp.csr_matrix:
    """Unweighted consistent P1 mass matrix."""
    local = (np.ones((4, 4)) + np.eye(4)) / 20.0
    data = mesh.volumes[:, None, None] * local
    rows = np.repeat(mesh.tets, 4, axis=1).ravel()
    cols = np.tile(mesh.tets, (1, 4)).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((data.ravel(), (rows, cols)), shape=(n, n))


def lumped_mass(mesh: TetMesh, eps=1.0) -> np.ndarray:
    """Row-sum lumping of the consistent eps-weighted mass, one weight per vertex.

    For P1 eps this is ``sum_K |K| / 20 * (eps_i + sum_{l in K} eps_l)``.
    """
    e = eps_values(eps, mesh)
    vol = mesh.volumes
    per_tet = e[mesh.tets] + e[mesh.tets].sum(axis=1, keepdims=True)
    out = np.zeros(mesh.n_vertices)
    np.add.at(out, mesh.tets.ravel(), (per_tet * vol[:, None] / 20.0).ravel())
    return out


class DiscreteOperators:
    """Assembled operators for one (mesh, eps, s) triple.

    Attributes
    ----------
    mass : (n,) lumped eps-weighted mass, shared by the three components
    mass0 : (n,) lumped unweighted mass (the L2 quadrature weights)
    stiffness : sparse (3n, 3n) matrix of the spatial form, row = test function
    """

    def __init__(self, mesh: TetMesh, eps, s: float = 1.0, *, check_s: bool = True):
        if check_s and s < 1:
            raise ConfigurationError(f"gauge parameter s must be >= 1, got {s}")
        self.mesh = mesh
        self.eps = np.array(eps_values(eps, mesh), dtype=float)
        self.s = float(s)
        self.mass = lumped_mass(mesh, self.eps)
        self.mass0 = lumped_mass(mesh, 1.0)

    @cached_property
    def divergence(self) -> sp.csr_matrix:
        """(nt, 3n) map from a nodal vector field to its element divergence."""
        return _scatter_matrix(self.mesh, self.mesh.grad_lambda)

    @cached_property
    def averaging(self) -> sp.csr_matrix:
        """(nt, n) map from nodal values to element barycentre values."""
        nt = self.mesh.n_tets
        rows = np.repeat(np.arange(nt), 4)
        return sp.csr_matrix(
            (np.full(4 * nt, 0.25), (rows, self.mesh.tets.ravel())), shape=(nt, self.mesh.n_vertices)
        )

    @cached_property
    def eps_centre(self) -> np.ndarray:
        return self.eps[self.mesh.tets].mean(axis=1)

    @cached_property
    def eps_gradient(self) -> np.ndarray:
        return np.einsum("kl,klc->kc", self.eps[self.mesh.tets], self.mesh.grad_lambda)

    @cached_property
    def weighted_divergence(self) -> sp.csr_matrix:
        """(nt, 3n) map ``E -> div(eps E)`` at element barycentres."""
        g = self.mesh.grad_lambda * self.eps_centre[:, None, None]
        g = g + 0.25 * self.eps_gradient[:, None, :]
        return _scatter_matrix(self.mesh, g)

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        V = sp.diags(self.mesh.volumes)
        D = self.divergence
        lap = sp.kron(scalar_stiffness(self.mesh), sp.identity(3), format="csr")
        K = lap - D.T @ V @ D + self.s * (D.T @ V @ self.weighted_divergence)
        return K.tocsr()

    @cached_property
    def stiffness_t(self) -> sp.csr_matrix:
        return self.stiffness.T.tocsr()

    @cached_property
    def mass_consistent0(self) -> sp.csr_matrix:
        return consistent_mass(self.mesh)

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return (self.stiffness @ v.reshape(-1)).reshape(v.shape)

    def apply_transpose(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return (self.stiffness_t @ v.reshape(-1)).reshape(v.shape)

    def div(self, v: np.ndarray) -> np.ndarray:
        """Element divergence of a nodal vector field (or a stack of them)."""
        v = np.asarray(v, dtype=float)
        if v.ndim == 2:
            return self.divergence @ v.reshape(-1)
        return (self.divergence @ v.reshape(v.shape[0], -1).T).T

    def boundary_mass(self, face_ids: np.ndarray) -> np.ndarray:
        return self.mesh.face_vertex_weights(face_ids)


def assemble_operators(mesh: TetMesh, eps, s: float = 1.0) -> DiscreteOperators:
    """Build the lumped mass and stiffness for ``eps`` on ``mesh``."""
    return DiscreteOperators(mesh, eps, s)


def element_gradient(mesh: TetMesh, v: np.ndarray) -> np.ndarray:
    """Element-constant gradient: (nt, 3) for scalar, (nt, 3, 3) for vector fields.

    For vector fields ``G[K, i, j] = d v_i / d x_j``.
    """
    v = np.asarray(v, dtype=float)
    g = mesh.grad_lambda
    if v.ndim == 1:
        return np.einsum("kl,klj->kj", v[mesh.tets], g)
    return np.einsum("kli,klj->kij", v[mesh.tets], g)


def face_jumps(q: np.ndarray, mesh: TetMesh) -> np.ndarray:
    """Absolute jump of an element-constant quantity across every face.

    ``q`` may be a scalar per tet (jump of values), a vector per tet (jump of
    the normal component) or a 3x3 tensor per tet such as a gradient (norm of
    the jump of the normal derivative ``G n``). Boundary faces get 0.
    """
    q = np.asarray(q, dtype=float)
    nf = len(mesh.faces)
    out = np.zeros(nf)
    interior = np.flatnonzero(mesh.face_neighbor >= 0)
    a = q[mesh.face_owner[interior]]
    b = q[mesh.face_neighbor[interior]]
    n = mesh.face_normals[interior]
    if q.ndim == 1:
        out[interior] = np.abs(a - b)
    elif q.ndim == 2:
        out[interior] = np.abs(np.einsum("fj,fj->f", a - b, n))
    elif q.ndim == 3:
        out[interior] = np.linalg.norm(np.einsum("fij,fj->fi", a - b, n), axis=1)
    else:
        raise MismatchError("face_jumps expects a scalar, vector or tensor per tet")
    return out


def face_jump_normal(q: np.ndarray, mesh: TetMesh) -> np.ndarray:
    """Per-tet maximum of the absolute face jumps of ``q`` over the tet's faces."""
    return face_jumps(q, mesh)[mesh.tet_faces].max(axis=1)


def time_jump(values: np.ndarray, dt: float) -> np.ndarray:
    """Per-interval maximal jump of the time-difference quotient.

    ``values`` has shape ``(N+1, ...)``. The jump at interior node ``t_k`` is
    the forward quotient minus the backward one and vanishes at ``t_0`` and
    ``t_N``. Returns shape ``(N, ...)``; see :func:`time_jump_vector` for
    vector-valued fields.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[0] < 2:
        raise MismatchError("time_jump needs at least two time levels")
    node = np.abs(_node_jumps(values, dt))
    return np.maximum(node[:-1], node[1:])


def time_jump_vector(values: np.ndarray, dt: float) -> np.ndarray:
    """Like :func:`time_jump` with the last axis treated as a vector."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] < 2:
        raise MismatchError("time_jump needs at least two time levels")
    node = np.linalg.norm(_node_jumps(values, dt), axis=-1)
    return np.maximum(node[:-1], node[1:])


def _node_jumps(values: np.ndarray, dt: float) -> np.ndarray:
    quot = np.diff(values, axis=0) / dt
    jumps = np.zeros_like(values)
    jumps[1:-1] = quot[1:] - quot[:-1]
    return jumps

"""Conforming tetrahedral meshes of an axis-aligned box.

The level-0 mesh splits every cube cell into six Kuhn tetrahedra that share
the cube's main diagonal, which keeps the structured mesh conforming without
any bookkeeping. Local refinement is red (edge-midpoint, 8 children) for the
marked elements and green closure for their neighbours, so that the result
never contains hanging nodes.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError, GeometryError

# local edge numbering: (0,1) (0,2) (0,3) (1,2) (1,3) (2,3)
TET_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])
# local face i is opposite to local vertex i
TET_FACES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])
# local edges lying in local face i
FACE_EDGES = np.array([[3, 4, 5], [1, 2, 5], [0, 2, 4], [0, 1, 3]])

BOUNDARY_TAGS = ("front", "back", "lateral")
TAG_CODES = {name: code for code, name in enumerate(BOUNDARY_TAGS)}


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lo, hi]``."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    @classmethod
    def cube(cls, a: float, b: float) -> "Box":
        return cls((a, a, a), (b, b, b))

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.hi, float) - np.asarray(self.lo, float)

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    def contains(self, x: np.ndarray, tol: float = 1e-9, strict: bool = False) -> np.ndarray:
        """Point-wise membership test; ``strict`` excludes the box surface."""
        x = np.atleast_2d(x)
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        if strict:
            return np.all((x > lo + tol) & (x < hi - tol), axis=1)
        return np.all((x >= lo - tol) & (x <= hi + tol), axis=1)


@dataclass(frozen=True, eq=False)
class TetMesh:
    """Immutable tetrahedral mesh.

    Attributes
    ----------
    vertices : (nv, 3) float array
    tets : (nt, 4) int array, positively oriented
    level : (nt,) int array, refinement depth of each element
    bounds : the outer box
    inner_box : the sub-box where the permittivity is unknown
    """

    vertices: np.ndarray
    tets: np.ndarray
    level: np.ndarray
    bounds: Box
    inner_box: Box

    def __post_init__(self):
        for name in ("vertices", "tets", "level"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_tets(self) -> int:
        return self.tets.shape[0]

    @cached_property
    def uid(self) -> str:
        """Content hash used to check that fields live on this mesh."""
        import hashlib

        h = hashlib.sha1()
        h.update(np.ascontiguousarray(self.vertices).tobytes())
        h.update(np.ascontiguousarray(self.tets).tobytes())
        return h.hexdigest()[:16]

    # -- geometry ---------------------------------------------------------
    @cached_property
    def signed_volumes(self) -> np.ndarray:
        p = self.vertices[self.tets]
        a = p[:, 1] - p[:, 0]
        b = p[:, 2] - p[:, 0]
        c = p[:, 3] - p[:, 0]
        return np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0

    @property
    def volumes(self) -> np.ndarray:
        return np.abs(self.signed_volumes)

    @cached_property
    def grad_lambda(self) -> np.ndarray:
        """(nt, 4, 3) gradients of the barycentric coordinates."""
        p = self.vertices[self.tets]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=2)
        inv = np.linalg.inv(jac)  # rows are grads of lambda_1..3
        g = np.empty((self.n_tets, 4, 3))
        g[:, 1:] = inv
        g[:, 0] = -inv.sum(axis=1)
        return g

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.tets].mean(axis=1)

    # -- topology ---------------------------------------------------------
    @cached_property
    def _edge_data(self):
        pairs = np.sort(self.tets[:, TET_EDGES], axis=2).reshape(-1, 2)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        return edges, inverse.reshape(self.n_tets, 6)

    @property
    def edges(self) -> np.ndarray:
        return self._edge_data[0]

    @property
    def tet_edges(self) -> np.ndarray:
        return self._edge_data[1]

    @cached_property
    def _face_data(self):
        tri = np.sort(self.tets[:, TET_FACES], axis=2).reshape(-1, 3)
        faces, first, inverse = np.unique(tri, axis=0, return_index=True, return_inverse=True)
        inverse = inverse.reshape(-1)
        owner = np.full(len(faces), -1, dtype=np.int64)
        neighbor = np.full(len(faces), -1, dtype=np.int64)
        tet_of = np.repeat(np.arange(self.n_tets), 4)
        owner[inverse[first]] = tet_of[first]
        rest = np.ones(len(inverse), bool)
        rest[first] = False
        counts = np.bincount(inverse, minlength=len(faces))
        if np.any(counts > 2):
            raise GeometryError("non-manifold mesh: a face is shared by more than two tets")
        neighbor[inverse[rest]] = tet_of[rest]
        return faces, owner, neighbor, inverse.reshape(self.n_tets, 4)

    @property
    def faces(self) -> np.ndarray:
        return self._face_data[0]

    @property
    def face_owner(self) -> np.ndarray:
        return self._face_data[1]

    @property
    def face_neighbor(self) -> np.ndarray:
        """Neighbouring tet of each face, ``-1`` on the boundary."""
        return self._face_data[2]

    @property
    def tet_faces(self) -> np.ndarray:
        """(nt, 4) face index of the local face opposite each local vertex."""
        return self._face_data[3]

    @cached_property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_neighbor < 0)

    @cached_property
    def face_normals(self) -> np.ndarray:
        """Unit normals pointing out of the owner tet, one per face."""
        p = self.vertices[self.faces]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        n /= np.linalg.norm(n, axis=1)[:, None]
        away = self.centroids[self.face_owner] - p[:, 0]
        flip = np.einsum("ij,ij->i", n, away) > 0
        n[flip] *= -1
        return n

    @cached_property
    def face_areas(self) -> np.ndarray:
        p = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    @cached_property
    def boundary_side(self) -> np.ndarray:
        """Box side (``2 * axis + is_max``) of each boundary face."""
        lo = np.asarray(self.bounds.lo)
        hi = np.asarray(self.bounds.hi)
        tol = 1e-9 * max(1.0, float(np.max(self.bounds.extent)))
        p = self.vertices[self.faces[self.boundary_faces]]
        side = np.full(len(self.boundary_faces), -1)
        for axis in range(3):
            on_lo = np.all(np.abs(p[:, :, axis] - lo[axis]) < tol, axis=1)
            on_hi = np.all(np.abs(p[:, :, axis] - hi[axis]) < tol, axis=1)
            side[on_lo & (side < 0)] = 2 * axis
            side[on_hi & (side < 0)] = 2 * axis + 1
        return side

    @cached_property
    def boundary_tags(self) -> np.ndarray:
        """Tag code (index into ``BOUNDARY_TAGS``) of each boundary face.

        Waves travel along x3: the x3 = min side is the front, x3 = max the back.
        """
        side = self.boundary_side
        tags = np.full(len(side), TAG_CODES["lateral"])
        tags[side == 4] = TAG_CODES["front"]
        tags[side == 5] = TAG_CODES["back"]
        return tags

    def tagged_faces(self, tag: str) -> np.ndarray:
        """Global indices of boundary faces carrying ``tag``."""
        if tag not in TAG_CODES:
            raise ConfigurationError(f"unknown boundary tag {tag!r}")
        return self.boundary_faces[self.boundary_tags == TAG_CODES[tag]]

    def face_vertex_weights(self, face_ids: np.ndarray) -> np.ndarray:
        """Vertex-lumped surface quadrature weights over the given faces."""
        w = np.zeros(self.n_vertices)
        np.add.at(w, self.faces[face_ids].ravel(), np.repeat(self.face_areas[face_ids] / 3.0, 3))
        return w

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.faces[self.boundary_faces])

    @cached_property
    def free_vertices(self) -> np.ndarray:
        """Boolean mask of vertices strictly inside the inner box."""
        return self.inner_box.contains(self.vertices, strict=True)

    @cached_property
    def inner_tets(self) -> np.ndarray:
        """Boolean mask of tets whose centroid lies in the inner box."""
        return self.inner_box.contains(self.centroids)

    @cached_property
    def vertex_tets(self):
        """CSR-like incidence: ``(offsets, tet_ids)`` of the tets around each vertex."""
        flat = self.tets.ravel()
        order = np.argsort(flat, kind="stable")
        offsets = np.zeros(self.n_vertices + 1, dtype=np.int64)
        np.cumsum(np.bincount(flat, minlength=self.n_vertices), out=offsets[1:])
        return offsets, order // 4

    @property
    def h_min(self) -> float:
        return float(mesh_function(self).min())

    def validate(self) -> None:
        """Raise :class:`GeometryError` unless every mesh invariant holds."""
        if np.any(self.signed_volumes <= 0):
            raise GeometryError("mesh has non-positively oriented tets")
        used = np.zeros(self.n_vertices, bool)
        used[self.tets.ravel()] = True
        if not used.all():
            raise GeometryError("mesh has vertices that belong to no tet")
        check_conformity(self)


def check_conformity(mesh: TetMesh) -> None:
    """Raise unless the mesh is conforming and fills its box exactly.

    A hanging node leaves a face that is covered from one side only and does
    not lie on the box surface, so checking that every one-sided face lies on
    the box is enough. Volume and surface area close the argument.
    """
    side = mesh.boundary_side
    if np.any(side < 0):
        raise GeometryError(
            f"{int(np.sum(side < 0))} one-sided faces lie inside the box (hanging nodes)"
        )
    vol = mesh.volumes.sum()
    if not np.isclose(vol, mesh.bounds.volume, rtol=1e-12, atol=0):
        raise GeometryError(f"mesh volume {vol} differs from box volume {mesh.bounds.volume}")
    ext = mesh.bounds.extent
    area = 2 * (ext[0] * ext[1] + ext[1] * ext[2] + ext[0] * ext[2])
    barea = mesh.face_areas[mesh.boundary_faces].sum()
    if not np.isclose(barea, area, rtol=1e-12, atol=0):
        raise GeometryError("boundary faces do not cover the box surface")


def _orient(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    p = vertices[tets]
    vol = np.einsum(
        "ij,ij->i", p[:, 1] - p[:, 0], np.cross(p[:, 2] - p[:, 0], p[:, 3] - p[:, 0])
    )
    tets = tets.copy()
    neg = vol < 0
    tets[neg, 2], tets[neg, 3] = tets[neg, 3], tets[neg, 2].copy()
    return tets


def build_uniform_mesh(bounds: Box, h0: float, inner_box: Box | None = None) -> TetMesh:
    """Structured Kuhn mesh: every cube of side ``h0`` split into 6 tets.

    Raises
    ------
    ConfigurationError
        If an edge of ``bounds`` is not an integer multiple of ``h0``.
    """
    if h0 <= 0:
        raise ConfigurationError("h0 must be positive")
    counts = []
    for axis, length in enumerate(bounds.extent):
        q = length / h0
        n = int(round(q))
        if n < 1 or abs(q - n) > 1e-9 * max(1.0, q):
            raise ConfigurationError(
                f"box edge along axis x{axis + 1} (length {length:g}) is not a multiple of h0={h0:g}"
            )
        counts.append(n)
    nx, ny, nz = counts
    lo = np.asarray(bounds.lo, float)
    gx, gy, gz = (lo[i] + h0 * np.arange(n + 1) for i, n in enumerate(counts))
    X, Y, Z = np.meshgrid(gx, gy, gz, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
    # pin the far faces exactly on the box
    for axis in range(3):
        vertices[np.isclose(vertices[:, axis], bounds.hi[axis]), axis] = bounds.hi[axis]

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    I, J, K = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    I, J, K = I.ravel(), J.ravel(), K.ravel()
    unit = np.eye(3, dtype=int)
    tets = []
    for perm in itertools.permutations(range(3)):
        step = np.zeros(3, dtype=int)
        corners = [vid(I, J, K)]
        for axis in perm:
            step = step + unit[axis]
            corners.append(vid(I + step[0], J + step[1], K + step[2]))
        tets.append(np.column_stack(corners))
    tets = np.vstack(tets)
    tets = _orient(vertices, tets)
    return TetMesh(
        vertices=vertices,
        tets=tets,
        level=np.zeros(len(tets), dtype=np.int64),
        bounds=bounds,
        inner_box=inner_box if inner_box is not None else bounds,
    )


def mesh_function(mesh: TetMesh) -> np.ndarray:
    """Element diameter ``h[K] = diam(K)`` (longest edge)."""
    p = mesh.vertices[mesh.tets]
    d = p[:, TET_EDGES[:, 0]] - p[:, TET_EDGES[:, 1]]
    return np.sqrt((d**2).sum(axis=2)).max(axis=1)


def _face_pattern(mask: np.ndarray) -> np.ndarray:
    """Local face whose edges contain every marked edge, or -1."""
    out = np.full(len(mask), -1)
    for f in range(4):
        inside = mask[:, FACE_EDGES[f]].sum(axis=1)
        hit = (inside == mask.sum(axis=1)) & (out < 0)
        out[hit] = f
    return out


def closure_marks(mesh: TetMesh, edge_mask: np.ndarray) -> np.ndarray:
    """Close a set of marked edges under the admissible subdivision patterns.

    Admissible per-tet patterns: no edge, one edge (green bisection), the three
    edges of one face (green face split), or all six edges (red). Two marked
    edges in one face pull in the third; anything else is upgraded to red.
    The result is a fixed point, so applying the closure twice changes nothing.
    """
    mask_e = np.asarray(edge_mask, bool).copy()
    te = mesh.tet_edges
    while True:
        m = mask_e[te]
        cnt = m.sum(axis=1)
        face = _face_pattern(m)
        upgrade_red = (cnt >= 2) & (face < 0) & (cnt < 6)
        two_in_face = (cnt == 2) & (face >= 0)
        before = mask_e.sum()
        if upgrade_red.any():
            mask_e[te[upgrade_red].ravel()] = True
        if two_in_face.any():
            rows = np.flatnonzero(two_in_face)
            mask_e[te[rows[:, None], FACE_EDGES[face[rows]]].ravel()] = True
        if mask_e.sum() == before:
            return mask_e


def _red_children(v: np.ndarray, mid: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Eight children of each tet; ``mid[:, e]`` is the midpoint of local edge e.

    The inner octahedron is cut along its shortest diagonal.
    """
    m01, m02, m03, m12, m13, m23 = (mid[:, i] for i in range(6))
    corners = [
        np.column_stack([v[:, 0], m01, m02, m03]),
        np.column_stack([v[:, 1], m01, m12, m13]),
        np.column_stack([v[:, 2], m02, m12, m23]),
        np.column_stack([v[:, 3], m03, m13, m23]),
    ]
    # opposite midpoint pairs: (m01,m23), (m02,m13), (m03,m12)
    diag = [(m01, m23), (m02, m13), (m03, m12)]
    lengths = np.stack(
        [np.linalg.norm(verts[a] - verts[b], axis=1) for a, b in diag], axis=1
    )
    choice = np.argmin(np.round(lengths, 12), axis=1)
    # ring of the four remaining midpoints around each diagonal, in cyclic order
    rings = [
        (m02, m03, m13, m12),  # around m01-m23
        (m01, m03, m23, m12),  # around m02-m13
        (m01, m02, m23, m13),  # around m03-m12
    ]
    inner = []
    for c, ((a, b), ring) in enumerate(zip(diag, rings)):
        sel = choice == c
        if not sel.any():
            continue
        a, b = a[sel], b[sel]
        r = [x[sel] for x in ring]
        for i in range(4):
            inner.append(np.column_stack([a, b, r[i], r[(i + 1) % 4]]))
    return np.vstack(corners + inner) if inner else np.vstack(corners)


def refine(mesh: TetMesh, marked) -> TetMesh:
    """Red-refine the marked tets and close the mesh conformingly.

    Old vertices keep their indices; new vertices (edge midpoints) are appended,
    so the result's vertex set contains the input's.
    """
    marked = np.unique(np.asarray(list(marked) if not isinstance(marked, np.ndarray) else marked, dtype=np.int64))
    if marked.size == 0:
        return mesh
    if marked.min() < 0 or marked.max() >= mesh.n_tets:
        raise GeometryError("marked tet index out of range")
    edge_mask = np.zeros(len(mesh.edges), bool)
    edge_mask[mesh.tet_edges[marked].ravel()] = True
    edge_mask = closure_marks(mesh, edge_mask)

    new_edges = np.flatnonzero(edge_mask)
    mid_id = np.full(len(mesh.edges), -1, dtype=np.int64)
    mid_id[new_edges] = mesh.n_vertices + np.arange(len(new_edges))
    mids = 0.5 * (mesh.vertices[mesh.edges[new_edges, 0]] + mesh.vertices[mesh.edges[new_edges, 1]])
    verts = np.vstack([mesh.vertices, mids])

    te = mesh.tet_edges
    m = edge_mask[te]
    cnt = m.sum(axis=1)
    face = _face_pattern(m)
    tets = mesh.tets
    out_tets = [tets[cnt == 0]]
    out_level = [mesh.level[cnt == 0]]

    red = np.flatnonzero(cnt == 6)
    if red.size:
        ch = _red_children(tets[red], mid_id[te[red]], verts)
        out_tets.append(ch)
        out_level.append(np.tile(mesh.level[red] + 1, 8))

    one = np.flatnonzero(cnt == 1)
    if one.size:
        le = np.argmax(m[one], axis=1)
        a = tets[one, TET_EDGES[le, 0]]
        b = tets[one, TET_EDGES[le, 1]]
        others = np.array([[k for k in range(4) if k not in pair] for pair in TET_EDGES])
        c = tets[one, others[le, 0]]
        d = tets[one, others[le, 1]]
        mm = mid_id[te[one, le]]
        out_tets += [np.column_stack([a, mm, c, d]), np.column_stack([mm, b, c, d])]
        out_level += [mesh.level[one] + 1] * 2

    three = np.flatnonzero((cnt == 3) & (face >= 0))
    if three.size:
        f = face[three]
        apex = tets[three, f]
        fv = tets[three[:, None], TET_FACES[f]]  # (k, 3) face vertices
        # midpoint of the face edge joining face-local vertices i and j
        def fmid(i, j):
            gi = TET_FACES[f, i]
            gj = TET_FACES[f, j]
            lo_, hi_ = np.minimum(gi, gj), np.maximum(gi, gj)
            lut = {tuple(e): k for k, e in enumerate(TET_EDGES)}
            le = np.array([lut[(x, y)] for x, y in zip(lo_, hi_)])
            return mid_id[te[three, le]]

        m01, m02, m12 = fmid(0, 1), fmid(0, 2), fmid(1, 2)
        out_tets += [
            np.column_stack([fv[:, 0], m01, m02, apex]),
            np.column_stack([fv[:, 1], m12, m01, apex]),
            np.column_stack([fv[:, 2], m02, m12, apex]),
            np.column_stack([m01, m12, m02, apex]),
        ]
        out_level += [mesh.level[three] + 1] * 4

    new_tets = _orient(verts, np.vstack(out_tets))
    new = TetMesh(
        vertices=verts,
        tets=new_tets,
        level=np.concatenate(out_level),
        bounds=mesh.bounds,
        inner_box=mesh.inner_box,
    )
    return new


def refine_uniform(mesh: TetMesh, times: int = 1) -> TetMesh:
    """Red-refine every element ``times`` times."""
    for _ in range(times):
        mesh = refine(mesh, np.arange(mesh.n_tets))
    return mesh


def barycentric(mesh: TetMesh, tet_ids: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of ``points[i]`` in tet ``tet_ids[i]``."""
    p0 = mesh.vertices[mesh.tets[tet_ids, 0]]
    g = mesh.grad_lambda[tet_ids]  # (k, 4, 3)
    lam = np.einsum("kij,kj->ki", g[:, 1:], points - p0)
    return np.column_stack([1.0 - lam.sum(axis=1), lam])


def locate_points(mesh: TetMesh, points: np.ndarray, tol: float = 1e-9):
    """Find a containing tet and barycentric weights for each point.

    Returns ``(tet_ids, weights)``. Raises :class:`GeometryError` when a point
    lies outside every tet by more than ``tol`` (in barycentric units).
    """
    points = np.atleast_2d(np.asarray(points, float))
    n = len(points)
    tet_ids = np.full(n, -1, dtype=np.int64)
    weights = np.zeros((n, 4))
    tree = cKDTree(mesh.centroids)
    pending = np.arange(n)
    for k in (8, 32, 128):
        if pending.size == 0:
            break
        k = min(k, mesh.n_tets)
        _, cand = tree.query(points[pending], k=k)
        cand = cand.reshape(len(pending), -1)
        best_min = np.full(len(pending), -np.inf)
        for j in range(cand.shape[1]):
            lam = barycentric(mesh, cand[:, j], points[pending])
            mn = lam.min(axis=1)
            better = mn > best_min
            best_min[better] = mn[better]
            tet_ids[pending[better]] = cand[better, j]
            weights[pending[better]] = lam[better]
        pending = pending[best_min < -tol]
    if pending.size:
        # exhaustive fallback
        for i in pending:
            lam = barycentric(mesh, np.arange(mesh.n_tets), np.repeat(points[i : i + 1], mesh.n_tets, 0))
            j = int(np.argmax(lam.min(axis=1)))
            if lam[j].min() < -tol:
                raise GeometryError(f"point {points[i]} lies outside the source mesh")
            tet_ids[i] = j
            weights[i] = lam[j]
    return tet_ids, weights


def interpolate_nodal(field: np.ndarray, mesh_a: TetMesh, mesh_b: TetMesh) -> np.ndarray:
    """Evaluate the P1 field ``field`` (on ``mesh_a``) at the vertices of ``mesh_b``.

    Works for scalar (nv,) and vector (nv, k) nodal fields. Target vertices that
    coincide with a source vertex copy its value exactly.
    """
    field = np.asarray(field)
    if field.shape[0] != mesh_a.n_vertices:
        raise GeometryError("field does not live on the source mesh")
    if mesh_a is mesh_b:
        return field.copy()
    pts = mesh_b.vertices
    out = np.empty((mesh_b.n_vertices,) + field.shape[1:], dtype=float)
    dist, nearest = cKDTree(mesh_a.vertices).query(pts)
    scale = max(1.0, float(np.max(mesh_a.bounds.extent)))
    same = dist <= 1e-12 * scale
    out[same] = field[nearest[same]]
    rest = np.flatnonzero(~same)
    if rest.size:
        tid, w = locate_points(mesh_a, pts[rest])
        vals = field[mesh_a.tets[tid]]  # (k, 4, ...)
        out[rest] = np.einsum("ki,ki...->k...", w, vals)
    return out

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adaptive_cip.errors import ConfigurationError, GeometryError
from adaptive_cip.mesh import (
    Box,
    TetMesh,
    build_uniform_mesh,
    check_conformity,
    closure_marks,
    interpolate_nodal,
    locate_points,
    mesh_function,
    refine,
    refine_uniform,
)


def test_uniform_mesh_counts():
    m = build_uniform_mesh(Box.cube(0, 1), 0.5)
    assert (m.n_tets, m.n_vertices) == (48, 27)
    m1 = build_uniform_mesh(Box.cube(0, 1), 1.0)
    assert (m1.n_tets, m1.n_vertices) == (6, 8)
    assert np.all(m.level == 0)
    m.validate()


def test_non_divisible_box_names_axis():
    with pytest.raises(ConfigurationError, match="x1"):
        build_uniform_mesh(Box.cube(0, 1), 0.3)
    with pytest.raises(ConfigurationError, match="x3"):
        build_uniform_mesh(Box((0, 0, 0), (1, 1, 0.75)), 0.5)


def test_boundary_is_watertight_and_tagged(cube48):
    # 6 sides x 4 squares x 2 triangles
    assert len(cube48.boundary_faces) == 48
    for tag in ("front", "back"):
        f = cube48.tagged_faces(tag)
        assert len(f) == 8
        z = cube48.vertices[cube48.faces[f]][:, :, 2]
        assert np.all(z == (0.0 if tag == "front" else 1.0))
    assert len(cube48.tagged_faces("lateral")) == 32
    with pytest.raises(ConfigurationError):
        cube48.tagged_faces("illumination")


def test_mesh_function_reference_tet():
    h = 0.3
    v = np.array([[0, 0, 0], [h, 0, 0], [0, h, 0], [0, 0, h]], float)
    m = TetMesh(v, np.array([[0, 1, 2, 3]]), np.zeros(1, np.int64), Box.cube(0, h), Box.cube(0, h))
    assert mesh_function(m)[0] == pytest.approx(h * np.sqrt(2), rel=1e-15)


def test_mesh_function_uniform(cube48):
    h = mesh_function(cube48)
    assert np.all(h == h[0]) and h[0] > 0


def test_red_children_halve_diameter(cube48):
    # children of a Kuhn tet: diameters recomputed from the child vertices
    fine = refine(cube48, np.arange(cube48.n_tets))
    parent_h = mesh_function(cube48).max()
    p = fine.vertices[fine.tets]
    child_h = np.array([max(np.linalg.norm(a - b) for a, b in itertools.combinations(q, 2)) for q in p])
    assert child_h.max() == pytest.approx(parent_h / 2, rel=1e-12)


def test_refine_all_and_none(cube48):
    fine = refine(cube48, np.arange(48))
    assert fine.n_tets == 384
    assert np.all(fine.level == 1)
    fine.validate()
    assert refine(cube48, []) is cube48


def test_refine_single_tet_conforming(cube48):
    fine = refine(cube48, [5])
    assert fine.n_tets >= cube48.n_tets + 8
    check_conformity(fine)
    fine.validate()


def test_refine_rejects_bad_index(cube48):
    with pytest.raises(GeometryError):
        refine(cube48, [48])


@given(st.sets(st.integers(0, 47), min_size=1, max_size=10))
def test_refine_invariants(marked):
    m = build_uniform_mesh(Box.cube(0, 1), 0.5)
    marked = np.array(sorted(marked))
    fine = refine(m, marked)
    fine.validate()
    # volume conservation
    assert fine.volumes.sum() == pytest.approx(m.volumes.sum(), rel=1e-12)
    # nested: old vertices kept in place
    assert np.array_equal(fine.vertices[: m.n_vertices], m.vertices)
    # marked elements are subdivided, so the finest local size drops
    assert mesh_function(fine).min() < mesh_function(m)[marked].min()
    assert fine.level.max() == 1


@given(st.sets(st.integers(0, 47), min_size=1, max_size=6))
def test_closure_is_idempotent(marked):
    m = build_uniform_mesh(Box.cube(0, 1), 0.5)
    mask = np.zeros(len(m.edges), bool)
    mask[m.tet_edges[sorted(marked)].ravel()] = True
    once = closure_marks(m, mask)
    assert np.array_equal(closure_marks(m, once), once)
    # a conforming mesh has no pending marks
    empty = np.zeros(len(m.edges), bool)
    assert not closure_marks(m, empty).any()


def test_second_level_refinement(cube48):
    fine = refine(refine(cube48, [0, 1]), [0])
    fine.validate()
    assert fine.level.max() == 2


def test_locate_points_outside_raises(cube48):
    with pytest.raises(GeometryError):
        locate_points(cube48, np.array([[2.0, 0.5, 0.5]]))


def test_interpolation_reproduces_constants_and_linears(cube48):
    fine = refine(cube48, [3, 17, 30])
    c = interpolate_nodal(np.full(cube48.n_vertices, 2.5), cube48, fine)
    assert np.allclose(c, 2.5, atol=0, rtol=1e-14)
    f = cube48.vertices[:, 0] + 2 * cube48.vertices[:, 1]
    g = interpolate_nodal(f, cube48, fine)
    assert np.allclose(g, fine.vertices[:, 0] + 2 * fine.vertices[:, 1], atol=1e-14)


@given(st.integers(0, 2**32 - 1))
def test_interpolation_identity_and_projection(seed):
    rng = np.random.default_rng(seed)
    a = build_uniform_mesh(Box.cube(0, 1), 0.5)
    f = rng.random(a.n_vertices)
    assert np.array_equal(interpolate_nodal(f, a, a), f)
    b = refine(a, rng.choice(48, size=3, replace=False))
    once = interpolate_nodal(f, a, b)
    assert np.array_equal(interpolate_nodal(once, b, b), once)


def test_tet_faces_and_normals(cube48):
    # owner-outward normals point away from the owner centroid
    p = cube48.vertices[cube48.faces][:, 0]
    away = p - cube48.centroids[cube48.face_owner]
    assert np.all(np.einsum("ij,ij->i", away, cube48.face_normals) > 0)
    interior = cube48.face_neighbor >= 0
    assert interior.sum() == (4 * 48 - 48) // 2


def test_free_vertices_strictly_inside():
    m = build_uniform_mesh(Box.cube(-0.8, 0.8), 0.4, Box.cube(-0.4, 0.4))
    free = m.free_vertices
    assert free.sum() == 1
    assert np.allclose(m.vertices[free], 0.0)

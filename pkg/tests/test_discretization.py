import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import tet_gradient, volume

from adaptive_cip.discretization import (
    PermittivityField,
    assemble_operators,
    element_gradient,
    face_jump_normal,
    face_jumps,
    lumped_mass,
    time_jump,
    time_jump_vector,
)
from adaptive_cip.errors import ConfigurationError, MismatchError
from adaptive_cip.mesh import Box, build_uniform_mesh

seeds = st.integers(0, 2**32 - 1)


def dense_stiffness_oracle(mesh, eps, s):
    """Element loop over hat functions phi_i e_c."""
    V, T = mesh.vertices, mesh.tets
    n = mesh.n_vertices
    K = np.zeros((3 * n, 3 * n))
    for t in T:
        pts = V[t]
        vol = volume(pts)
        grads = [tet_gradient(pts, np.eye(4)[a]) for a in range(4)]
        e = eps[t]
        ec = e.mean()
        ge = tet_gradient(pts, e)
        for a in range(4):
            for c in range(3):
                # div(eps phi_a e_c) at the barycentre
                wdiv = ec * grads[a][c] + 0.25 * ge[c]
                for b in range(4):
                    for d in range(3):
                        lap = vol * np.dot(grads[a], grads[b]) if c == d else 0.0
                        div = vol * grads[a][c] * grads[b][d]
                        wd = vol * s * wdiv * grads[b][d]
                        # row: test function phi_b e_d, column: trial phi_a e_c
                        K[3 * t[b] + d, 3 * t[a] + c] += lap - div + wd
    return K


@pytest.mark.parametrize("c", [1.0, 3.7])
def test_constants_in_kernel_for_constant_eps(cube48, c):
    ops = assemble_operators(cube48, c, 1.0)
    v = np.tile([0.3, -1.2, 2.0], (cube48.n_vertices, 1))
    assert np.abs(ops.apply(v)).max() < 1e-12


def test_constant_image_is_the_gauge_term(cube48):
    # for varying eps, div(eps v) = grad(eps) . v survives; nothing else does
    rng = np.random.default_rng(0)
    eps = 1 + 4 * rng.random(cube48.n_vertices)
    ops = assemble_operators(cube48, eps, 2.0)
    c = np.array([0.3, -1.2, 2.0])
    v = np.tile(c, (cube48.n_vertices, 1))
    want = 2.0 * ops.divergence.T @ (cube48.volumes * (ops.eps_gradient @ c))
    assert np.allclose(ops.apply(v).reshape(-1), want, atol=1e-12)


def test_lumped_mass_partition_of_unity(cube48):
    ops = assemble_operators(cube48, 1.0)
    # three components share the scalar weights
    assert 3 * ops.mass.sum() == pytest.approx(3.0, rel=1e-14)
    assert np.all(ops.mass > 0)


def test_stiffness_matches_dense_oracle(cube6):
    rng = np.random.default_rng(3)
    eps = 1 + 4 * rng.random(cube6.n_vertices)
    for s in (1.0, 2.5):
        ops = assemble_operators(cube6, eps, s)
        assert np.allclose(ops.stiffness.toarray(), dense_stiffness_oracle(cube6, eps, s), atol=1e-13)


def test_symmetric_for_unit_eps(cube6):
    ops = assemble_operators(cube6, 1.0)
    rng = np.random.default_rng(1)
    v, w = rng.standard_normal((2, cube6.n_vertices, 3))
    assert np.vdot(ops.apply(v), w) == pytest.approx(np.vdot(ops.apply(w), v), abs=1e-12)


@given(seeds, st.floats(-3, 3), st.floats(-3, 3))
def test_linearity(seed, a, b):
    m = build_uniform_mesh(Box.cube(0, 1), 0.5)
    rng = np.random.default_rng(seed)
    ops = assemble_operators(m, 1 + 4 * rng.random(m.n_vertices))
    v, w = rng.standard_normal((2, m.n_vertices, 3))
    lhs = ops.apply(a * v + b * w)
    rhs = a * ops.apply(v) + b * ops.apply(w)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * np.abs(rhs).max())


@given(seeds)
def test_lumped_mass_linear_in_eps(seed):
    m = build_uniform_mesh(Box.cube(0, 1), 0.5)
    eps = 1 + 4 * np.random.default_rng(seed).random(m.n_vertices)
    assert np.allclose(lumped_mass(m, 2 * eps), 2 * lumped_mass(m, eps), rtol=1e-15)


def test_lumped_mass_formula(cube6):
    eps = np.arange(1.0, 9.0)
    # row sums of the consistent eps-weighted mass, by exact quadrature
    want = np.zeros(8)
    for t in cube6.tets:
        vol = volume(cube6.vertices[t])
        for i in t:
            want[i] += vol / 20 * (eps[i] + eps[t].sum())
    assert np.allclose(lumped_mass(cube6, eps), want, rtol=1e-14)


def test_wrong_mesh_and_gauge(cube48, cube6):
    with pytest.raises(MismatchError):
        assemble_operators(cube48, np.ones(cube6.n_vertices))
    with pytest.raises(MismatchError):
        assemble_operators(cube48, PermittivityField(np.ones(8), cube6))
    with pytest.raises(ConfigurationError):
        assemble_operators(cube48, 1.0, s=0.5)


def test_admissibility_flags(cube48):
    v = np.ones(cube48.n_vertices)
    assert PermittivityField(v, cube48).is_admissible(5.0)
    v[0] = 2.0  # a boundary vertex
    assert not PermittivityField(v, cube48).is_admissible(5.0)


def test_divergence_and_gradient_of_linear_field(cube48):
    x = cube48.vertices
    v = np.column_stack([2 * x[:, 0], -x[:, 1] + x[:, 2], 0.5 * x[:, 2]])
    ops = assemble_operators(cube48, 1.0)
    assert np.allclose(ops.div(v), 2 - 1 + 0.5, atol=1e-13)
    G = element_gradient(cube48, v)
    assert np.allclose(G, [[2, 0, 0], [0, -1, 1], [0, 0, 0.5]], atol=1e-13)


@given(seeds)
def test_face_jumps_vanish_for_linear_scalars(seed):
    m = build_uniform_mesh(Box.cube(0, 1), 0.5)
    c = np.random.default_rng(seed).standard_normal(4)
    f = c[0] + m.vertices @ c[1:]
    assert np.abs(face_jump_normal(element_gradient(m, f), m)).max() < 1e-12


def test_face_jump_two_tets(two_tets):
    # shared face x + y + z = 1; q . n = +1 on one side and -1 on the other
    n = np.ones(3) / np.sqrt(3)
    q = np.vstack([n, -n])
    jumps = face_jumps(q, two_tets)
    interior = two_tets.face_neighbor >= 0
    assert interior.sum() == 1
    assert jumps[interior][0] == pytest.approx(2.0, rel=1e-14)
    assert np.all(jumps[~interior] == 0)
    assert np.allclose(face_jump_normal(q, two_tets), 2.0)


@given(seeds)
def test_face_jump_nonnegative(seed):
    m = build_uniform_mesh(Box.cube(0, 1), 0.5)
    rng = np.random.default_rng(seed)
    for q in (rng.standard_normal(m.n_tets), rng.standard_normal((m.n_tets, 3)), rng.standard_normal((m.n_tets, 3, 3))):
        assert np.all(face_jump_normal(q, m) >= 0)


def test_time_jump_examples():
    vals = np.array([0.0, 0.0, 1.0])
    assert np.allclose(time_jump(vals, 1.0), [1.0, 1.0])
    assert np.allclose(time_jump(np.array([0.0, 3.0]), 0.1), [0.0])
    lin = np.linspace(0, 2, 7)[:, None] * np.ones((1, 4))
    assert np.allclose(time_jump(lin, 1 / 3), 0.0)
    vec = np.zeros((3, 2, 3))
    vec[2, 0] = [3.0, 4.0, 0.0]
    assert np.allclose(time_jump_vector(vec, 1.0)[:, 0], [5.0, 5.0])
    with pytest.raises(MismatchError):
        time_jump(np.zeros(1), 1.0)

import numpy as np
import pytest
from conftest import two_tet_mesh
from hypothesis import given
from hypothesis import strategies as st
from oracles import eta_bruteforce, residual_bruteforce

from adaptive_cip.errors import MismatchError
from adaptive_cip.estimator import (
    ElementIndicator,
    coefficient_indicator,
    eta_indicator,
    mark_elements,
    residual_indicator,
)
from adaptive_cip.mesh import Box, TetMesh, build_uniform_mesh
from adaptive_cip.objective import TikhonovParams
from adaptive_cip.wavefield import FieldTrajectory, TimeGrid

seeds = st.integers(0, 2**32 - 1)


def cube6():
    return build_uniform_mesh(Box.cube(0.0, 1.0), 1.0, Box.cube(-1.0, 2.0))


def single_tet():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
    return TetMesh(v, np.array([[0, 1, 2, 3]]), np.zeros(1, np.int64), Box.cube(0, 1), Box.cube(-1, 2))


def perturbed_cube6(seed):
    m = cube6()
    v = m.vertices + 0.08 * np.random.default_rng(seed).uniform(-1, 1, m.vertices.shape)
    return TetMesh(v, m.tets, m.level, m.bounds, m.inner_box)


def _trajs(mesh, grid, rng, n_sources):
    shape = (grid.n_steps + 1, mesh.n_vertices, 3)
    Es = [FieldTrajectory(rng.standard_normal(shape), grid, "direct", mesh) for _ in range(n_sources)]
    Ls = [FieldTrajectory(rng.standard_normal(shape), grid, "adjoint", mesh) for _ in range(n_sources)]
    return Es, Ls


def _check_oracles(mesh, n_steps, seed, n_sources=1, s=1.7):
    rng = np.random.default_rng(seed)
    grid = TimeGrid(0.3 * n_steps, n_steps)
    Es, Ls = _trajs(mesh, grid, rng, n_sources)
    eps = 1 + 4 * rng.random(mesh.n_vertices)
    eps0 = 1 + rng.random(mesh.n_vertices)
    params = TikhonovParams(alpha=0.07, eps0=eps0, s=s)
    V, T = mesh.vertices, mesh.tets
    lv_E = [E.levels for E in Es]
    lv_L = [L.levels for L in Ls]
    eta = eta_indicator(Es, Ls, eps, mesh, grid, s)
    want = eta_bruteforce(V, T, lv_E, lv_L, grid.dt, s)
    assert np.abs(eta.values - want).max() <= 1e-12
    res = residual_indicator(Es, Ls, eps, params, mesh, grid)
    want = residual_bruteforce(V, T, lv_E, lv_L, eps, eps0, 0.07, s, grid.dt, mesh.inner_tets)
    assert np.abs(res.values - want).max() <= 1e-12


@pytest.mark.parametrize("n_steps", [1, 3, 5])
@pytest.mark.parametrize("make", [cube6, two_tet_mesh, single_tet])
def test_indicators_match_bruteforce(make, n_steps):
    _check_oracles(make(), n_steps, seed=n_steps)


def test_indicators_match_bruteforce_two_sources():
    _check_oracles(cube6(), 3, seed=11, n_sources=2)


@given(seeds, st.integers(1, 5))
def test_indicators_match_bruteforce_perturbed(seed, n_steps):
    _check_oracles(perturbed_cube6(seed), n_steps, seed)


def _const_traj(mesh, grid, value, kind):
    levels = np.broadcast_to(np.asarray(value, float), (grid.n_steps + 1, mesh.n_vertices, 3)).copy()
    return FieldTrajectory(levels, grid, kind, mesh)


def test_zero_trajectories(two_tets):
    grid = TimeGrid(1.0, 3)
    E = _const_traj(two_tets, grid, 0.0, "direct")
    L = _const_traj(two_tets, grid, 0.0, "adjoint")
    assert not eta_indicator(E, L, 1.0, two_tets, grid).values.any()
    params = TikhonovParams(alpha=0.5)
    assert not residual_indicator(E, L, 1.0, params, two_tets, grid).values.any()
    eps = np.array([1.0, 2.0, 1.0, 1.0, 3.0])
    r = residual_indicator(E, L, eps, params, two_tets, grid)
    # mean over vertices of alpha |eps - eps0|
    assert np.allclose(r.values, [0.5 * 1.0 / 4, 0.5 * 3.0 / 4], rtol=1e-14)
    assert np.allclose(r.integral, r.values * two_tets.volumes, rtol=1e-14)


def test_eta_vanishes_for_affine_space_time_fields(two_tets):
    grid = TimeGrid(1.0, 4)
    A = np.array([[1.0, 2.0, 0.0], [0.5, -1.0, 3.0], [0.0, 1.0, 1.0]])
    x = two_tets.vertices
    levels = np.stack([(1 + 2 * t) * (x @ A.T + 0.3) for t in grid.times])
    E = FieldTrajectory(levels, grid, "direct", two_tets)
    L = FieldTrajectory(-levels, grid, "adjoint", two_tets)
    assert np.abs(eta_indicator(E, L, 2.0, two_tets, grid).values).max() < 1e-10


def test_residual_jump_term_two_tets(two_tets):
    # E = e1 everywhere; lam = (a, 0, 0) at the apex of the second tet only.
    # div lam jumps by a/2 across x + y + z = 1, |n . E| = 1/sqrt(3), h = sqrt(2)
    grid = TimeGrid(1.0, 4)
    a, s = 2.0, 1.0
    E = _const_traj(two_tets, grid, [1.0, 0.0, 0.0], "direct")
    lam = np.zeros((grid.n_steps + 1, 5, 3))
    lam[:, 4, 0] = a
    L = FieldTrajectory(lam, grid, "adjoint", two_tets)
    r = residual_indicator(E, L, 1.0, TikhonovParams(s=s), two_tets, grid)
    want = 1.0 / (2.0 * np.sqrt(6.0))
    assert np.allclose(r.values, want, rtol=1e-13)


def test_indicator_mismatch(two_tets):
    grid = TimeGrid(1.0, 3)
    E = _const_traj(two_tets, grid, 0.0, "direct")
    L = _const_traj(two_tets, TimeGrid(1.0, 4), 0.0, "adjoint")
    with pytest.raises(MismatchError):
        eta_indicator(E, L, 1.0, two_tets, grid)
    with pytest.raises(MismatchError):
        residual_indicator([E], [], 1.0, TikhonovParams(), two_tets, grid)


def test_indicator_is_nonnegative(cube48_free):
    rng = np.random.default_rng(4)
    grid = TimeGrid(1.0, 3)
    Es, Ls = _trajs(cube48_free, grid, rng, 1)
    for ind in (
        eta_indicator(Es, Ls, 1.0, cube48_free, grid),
        residual_indicator(Es, Ls, 1.0, TikhonovParams(), cube48_free, grid),
    ):
        assert np.all(ind.values >= 0) and np.all(np.isfinite(ind.values))


def test_residual_zero_outside_inner_box():
    mesh = build_uniform_mesh(Box.cube(-0.8, 0.8), 0.4, Box.cube(-0.4, 0.4))
    assert 0 < mesh.inner_tets.sum() < mesh.n_tets
    rng = np.random.default_rng(9)
    grid = TimeGrid(1.0, 3)
    Es, Ls = _trajs(mesh, grid, rng, 1)
    r = residual_indicator(Es, Ls, 1.0, TikhonovParams(), mesh, grid)
    assert np.all(r.values[~mesh.inner_tets] == 0)
    assert np.all(r.values[mesh.inner_tets] > 0)


def test_marking_examples(two_tets):
    m = mark_elements(np.array([1.0, 2.0, 4.0]), 0.7)
    assert m.elements.tolist() == [2] and m.threshold == pytest.approx(2.8)
    assert mark_elements(np.full(5, 3.0), 0.7).elements.tolist() == [0, 1, 2, 3, 4]
    z = mark_elements(np.zeros(4), 0.7)
    assert z.nothing_to_refine and z.elements.size == 0
    ind = ElementIndicator(np.array([0.5, 1.0]), "eta", two_tets)
    assert mark_elements(ind, 0.7).elements.tolist() == [1]
    with pytest.raises(ValueError):
        mark_elements(np.ones(3), 1.5)


@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=40), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_marking_monotone_in_beta(values, b1, b2):
    v = np.asarray(values)
    lo, hi = sorted((b1, b2))
    m_lo = set(mark_elements(v, lo).elements.tolist())
    m_hi = set(mark_elements(v, hi).elements.tolist())
    assert m_hi <= m_lo
    if v.max() > 0:
        assert m_hi


def test_coefficient_indicator_examples(cube48_free, cube48):
    ones = coefficient_indicator(1.0, cube48_free)
    assert np.all(ones.values == 1.0)
    eps = np.ones(cube48.n_vertices)
    eps[13] = 2.0
    ind = coefficient_indicator(eps, cube48)
    touching = np.any(cube48.tets == 13, axis=1)
    assert np.all(ind.values[touching & cube48.inner_tets] == 2.0)
    assert np.all(ind.values[~touching & cube48.inner_tets] == 1.0)
    assert np.all(ind.values[~cube48.inner_tets] == 0.0)
    shifted = coefficient_indicator(eps, cube48, exclude_exterior=False, shift=True)
    assert np.array_equal(shifted.values, np.where(touching, 1.0, 0.0))

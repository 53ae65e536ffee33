import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from adaptive_cip.mesh import Box, TetMesh, build_uniform_mesh

settings.register_profile(
    "default",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture
def cube6():
    """Unit cube as 6 tets, every vertex free."""
    return build_uniform_mesh(Box.cube(0.0, 1.0), 1.0, Box.cube(-1.0, 2.0))


@pytest.fixture
def cube48():
    return build_uniform_mesh(Box.cube(0.0, 1.0), 0.5)


@pytest.fixture
def cube48_free():
    return build_uniform_mesh(Box.cube(0.0, 1.0), 0.5, Box.cube(-1.0, 2.0))


def two_tet_mesh() -> TetMesh:
    """Corner tet of the unit cube plus its mirror across x + y + z = 1."""
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]], float)
    t = np.array([[0, 1, 2, 3], [1, 2, 3, 4]])
    # orient positively
    p = v[t]
    vol = np.einsum("ij,ij->i", p[:, 1] - p[:, 0], np.cross(p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]))
    t[vol < 0, 2], t[vol < 0, 3] = t[vol < 0, 3], t[vol < 0, 2].copy()
    return TetMesh(v, t, np.zeros(2, np.int64), Box.cube(0.0, 1.0), Box.cube(-1.0, 2.0))


@pytest.fixture
def two_tets():
    return two_tet_mesh()

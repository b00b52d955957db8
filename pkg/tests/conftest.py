import numpy as np
import pytest

from reentrant_dg.mesh import apply_curving_map, build_cartesian_mesh, perturb_vertices


def curved_coarse_mesh():
    """The study's level-0 mesh: jittered 4x4 square, swirled, quadratic geometry."""
    return apply_curving_map(perturb_vertices(build_cartesian_mesh(4, 4, q=2), 0.1, 0))


@pytest.fixture(scope="session")
def curved_mesh():
    return curved_coarse_mesh()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

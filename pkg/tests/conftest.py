import numpy as np
import pytest

from nimslam.config import SlamConfig
from nimslam.geometry import CameraIntrinsics, Pose, so3_exp
from nimslam.implicit_map import SceneBounds, init_decoder, init_map


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_bounds():
    return SceneBounds(np.array([-1.0, -1.0, -1.0]), np.array([1.0, 1.0, 1.0]))


@pytest.fixture
def small_pyramid(small_bounds):
    pyr = init_map(small_bounds, (0.8, 0.5, 0.3), channels=1, seed=7)
    gen = np.random.default_rng(7)
    for grid in pyr.levels:
        grid.interior()[...] = gen.normal(0.0, 0.5, size=grid.interior().shape)
    return pyr


@pytest.fixture
def small_decoder(small_pyramid):
    return init_decoder(small_pyramid.feature_dim, 16, seed=7)


@pytest.fixture
def camera():
    return CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 101, 101)


def random_pose(gen, rot_scale=0.3, t_scale=1.0):
    return Pose(so3_exp(gen.normal(0.0, rot_scale, 3)), gen.normal(0.0, t_scale, 3))

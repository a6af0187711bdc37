import numpy as np
import pytest

import diffrestore as dr


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def smooth_truth():
    return dr.smooth_motion_video(10, 64, 64, seed=3)


@pytest.fixture
def deblur_schedule():
    return dr.linear_schedule(1000, 1e-4, 0.02)


@pytest.fixture
def sr_schedule():
    return dr.linear_schedule(2000, 1e-6, 0.01)


def random_video(rng, shape=(2, 16, 16, 1), scale=1.0, unclamped=True):
    return dr.VideoTensor(scale * rng.standard_normal(shape), unclamped=unclamped)

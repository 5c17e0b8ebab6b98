import numpy as np
import pytest

from composcene.network import Architecture, init_params
from composcene.schedule import make_linear_schedule


@pytest.fixture(scope="session")
def tiny_arch():
    return Architecture(image_shape=(6, 5, 1), concept_dim=2, step_count=40,
                        hidden_sizes=(11, 7), time_embed_dim=8)


@pytest.fixture(scope="session")
def tiny_schedule():
    return make_linear_schedule(40)


def randomized_params(arch, seed=7, scale=0.3):
    params = init_params(arch, seed=1)
    gen = np.random.default_rng(seed)
    for k in params.arrays:
        params.arrays[k] = gen.normal(0.0, scale, params.arrays[k].shape).astype(np.float32)
    params.invalidate()
    return params


@pytest.fixture()
def tiny_params(tiny_arch):
    return randomized_params(tiny_arch)

import numpy as np
import pytest

from gramtex.gradcheck import tiny_spec
from gramtex.imageio import PreprocessSpec, preprocess
from gramtex.network import random_init
from gramtex.samples import tiled_texture


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(0))


@pytest.fixture(scope="session")
def tiny_network():
    """Seeded 2-conv + 1-pool network (8/16 channels) shared across tests."""
    return random_init(tiny_spec(), seed=3, scale=0.5)


# Maps 8-bit samples to roughly [-2, 2.2]; keeps tiny-network activations tame.
TEST_PREPROCESS = PreprocessSpec(
    channel_means=(2.1, 2.1, 2.1), channel_order="rgb", scale=1.0 / 60.0
)


@pytest.fixture(scope="session")
def periodic_texture32():
    """Seeded periodic 3x32x32 tensor in preprocessed space (tile 8)."""
    return preprocess(tiled_texture(seed=11, tile=8, reps=4), TEST_PREPROCESS)


@pytest.fixture(scope="session")
def periodic_texture64():
    """Seeded periodic 3x64x64 tensor in preprocessed space (tile 16)."""
    return preprocess(tiled_texture(seed=2, tile=16, reps=4), TEST_PREPROCESS)

"""
Pytest configuration and fixtures
"""
import numpy as np
import pytest

from src.core.config import TrainConfig, VerifyConfig
from src.services.data.synthetic import synthetic_dataset
from src.services.sbn.network import Direction, Topology, random_params


def make_pair(sizes, data_size, seed=0, weight_scale=1.0, bias_scale=0.5):
    """Random (generative, recognition) pair with matching topologies."""
    gen = random_params(Topology(tuple(sizes), data_size, Direction.GENERATIVE), seed, weight_scale, bias_scale)
    rec = random_params(Topology(tuple(sizes), data_size, Direction.RECOGNITION), seed + 1, weight_scale, bias_scale)
    return gen, rec


@pytest.fixture
def two_layer_pair():
    """SBN(3-2) on 4 pixels: latent 0 has 2 units, latent 1 has 3."""
    return make_pair((3, 2), 4, seed=11)


@pytest.fixture
def one_layer_pair():
    """SBN(3) on 3 pixels; no latent unit has descendants."""
    return make_pair((3,), 3, seed=5)


@pytest.fixture
def x4():
    return np.array([1.0, 0.0, 1.0, 1.0])


@pytest.fixture
def x3():
    return np.array([0.0, 1.0, 1.0])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_dataset():
    """300 synthetic 3-pixel images, 60 valid / 60 test."""
    return synthetic_dataset(300, 3, generator_seed=7, architecture=(4,), valid_fraction=0.2, test_fraction=0.2)


@pytest.fixture
def train_config():
    """Small synthetic training run; override fields per test."""
    def build(**overrides):
        values = dict(
            architecture="4",
            dataset="synthetic",
            synthetic_images=300,
            synthetic_dim=3,
            synthetic_architecture="4",
            synthetic_seed=7,
            synthetic_valid_fraction=0.2,
            synthetic_test_fraction=0.2,
            batch_size=20,
            epochs=1,
            validation_interval=5,
            valid_samples=2,
            test_samples=5,
            profile_images=5,
            profile_samples_per_image=50,
            profile_baseline_updates=5,
        )
        values.update(overrides)
        return TrainConfig(**values)
    return build


@pytest.fixture
def verify_config():
    """Two tiny models with the minimum trial count."""
    def build(**overrides):
        values = dict(models=2, max_units=4, data_size=3, trials=4000, chunk=2000, lemma_tables=10)
        values.update(overrides)
        return VerifyConfig(**values)
    return build

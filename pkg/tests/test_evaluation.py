"""
Tests for the variational bound on held-out images
"""
import numpy as np
import pytest

from src.core.errors import EmptyDatasetError, InvalidParameterError
from src.services.training.evaluation import evaluate_bound, per_image_bounds
from src.services.sbn.network import Direction, Topology, init_params


class TestEvaluation:
    """Test per-image and mean bounds"""

    def test_uniform_model(self, rng):
        """Test the bound of all-zero nets is D log 2"""
        gen = init_params(Topology((3, 2), 5, Direction.GENERATIVE), scale=1e-300)
        rec = init_params(Topology((3, 2), 5, Direction.RECOGNITION), scale=1e-300)
        images = rng.integers(0, 2, size=(7, 5))
        bounds = per_image_bounds(gen, rec, images, samples=3, seed=0)
        np.testing.assert_allclose(bounds, 5 * np.log(2), rtol=1e-12)

    def test_single_image(self, two_layer_pair, x4):
        """Test one image gives one bound"""
        gen, rec = two_layer_pair
        bounds = per_image_bounds(gen, rec, x4, samples=10, seed=0)
        assert bounds.shape == (1,)
        assert bounds[0] > 0

    def test_deterministic_across_threads(self, two_layer_pair, rng):
        """Test threads do not change the bounds"""
        gen, rec = two_layer_pair
        images = rng.integers(0, 2, size=(9, 4))
        # 4000 samples per image puts two images in each block
        single = per_image_bounds(gen, rec, images, samples=4000, seed=3, threads=1)
        many = per_image_bounds(gen, rec, images, samples=4000, seed=3, threads=4)
        np.testing.assert_array_equal(single, many)
        assert evaluate_bound(gen, rec, images, 4000, seed=3) == pytest.approx(single.mean())

    def test_seed_changes_estimate(self, two_layer_pair, rng):
        """Test a different seed draws different samples"""
        gen, rec = two_layer_pair
        images = rng.integers(0, 2, size=(4, 4))
        assert evaluate_bound(gen, rec, images, 5, seed=0) != evaluate_bound(gen, rec, images, 5, seed=1)

    def test_invalid_inputs(self, two_layer_pair, x4):
        """Test zero samples and an empty image set"""
        gen, rec = two_layer_pair
        with pytest.raises(InvalidParameterError):
            per_image_bounds(gen, rec, x4, samples=0, seed=0)
        with pytest.raises(EmptyDatasetError):
            per_image_bounds(gen, rec, np.zeros((0, 4)), samples=2, seed=0)

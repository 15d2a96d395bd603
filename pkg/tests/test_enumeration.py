"""
Tests for exact enumeration, finite differences and optimal baselines
"""
import numpy as np
import pytest

from src.core.errors import DegenerateCoordinateError, EnumerationCapError, InvalidParameterError, ShapeMismatchError
from src.services.oracle.enumeration import (
    ENUMERATION_CAP,
    configurations,
    coordinate_index,
    enumerate_expectation,
    enumerate_gradient,
    finite_diff_gradient,
    iterate_configurations,
    lr_variance_exact,
    optimal_baseline,
    optimal_baselines,
    score_moments,
)
from src.services.sbn.network import Direction, Topology, init_params
from tests.conftest import make_pair


class TestConfigurations:
    """Test the configuration index layout"""

    def test_bits_follow_latent_offsets(self):
        """Test configuration bits map onto latent offsets"""
        topology = Topology((3, 2), 4, Direction.RECOGNITION)
        latents = configurations(topology, 0, 32)
        assert latents[0].shape == (32, 2) and latents[1].shape == (32, 3)
        # index 0b00101: unit 0 of latent 0 and unit 0 of latent 1
        np.testing.assert_array_equal(latents[0][5], [1.0, 0.0])
        np.testing.assert_array_equal(latents[1][5], [1.0, 0.0, 0.0])
        stacked = np.concatenate(latents, axis=1)
        assert len(np.unique(stacked, axis=0)) == 32

    def test_probabilities_sum_to_one(self, two_layer_pair, x4):
        """Test q sums to one over every configuration"""
        gen, rec = two_layer_pair
        total = sum(chunk.q.sum() for chunk in iterate_configurations(gen, rec, x4))
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_cap(self, x4):
        """Test models above the enumeration cap"""
        gen, rec = make_pair((ENUMERATION_CAP + 1,), 4)
        with pytest.raises(EnumerationCapError) as excinfo:
            enumerate_expectation(gen, rec, x4)
        assert excinfo.value.units == ENUMERATION_CAP + 1

    def test_single_image_only(self, two_layer_pair):
        """Test a batch of images is rejected"""
        gen, rec = two_layer_pair
        with pytest.raises(ShapeMismatchError):
            enumerate_expectation(gen, rec, np.zeros((2, 4)))


class TestExactGradient:
    """Test the exact gradient against central differences"""

    def test_uniform_bound(self, x3):
        """Test all-zero nets give F = -D log 2 for every configuration"""
        gen = init_params(Topology((2,), 3, Direction.GENERATIVE), scale=1e-300)
        rec = init_params(Topology((2,), 3, Direction.RECOGNITION), scale=1e-300)
        assert enumerate_expectation(gen, rec, x3) == pytest.approx(-3 * np.log(2))

    @pytest.mark.parametrize("sizes,seed", [((3,), 0), ((3, 2), 1), ((2, 2, 2), 2)])
    def test_matches_finite_differences(self, sizes, seed):
        """Test the exact gradient against central differences"""
        gen, rec = make_pair(sizes, 3, seed=seed)
        x = np.array([1.0, 0.0, 1.0])
        exact = enumerate_gradient(gen, rec, x).flat()
        numeric = finite_diff_gradient(gen, rec, x, h=1e-5).flat()
        scale = np.abs(exact).max()
        assert np.abs(numeric - exact).max() / scale < 1e-6

    def test_error_shrinks_quadratically(self, one_layer_pair, x3):
        """Test halving h divides the central-difference error by about four"""
        gen, rec = one_layer_pair
        exact = enumerate_gradient(gen, rec, x3).flat()
        coarse = np.linalg.norm(finite_diff_gradient(gen, rec, x3, h=1e-3).flat() - exact)
        fine = np.linalg.norm(finite_diff_gradient(gen, rec, x3, h=5e-4).flat() - exact)
        assert 3.2 <= coarse / fine <= 4.8

    def test_threads_agree(self, two_layer_pair, x4):
        """Test threaded and serial enumeration agree"""
        gen, rec = two_layer_pair
        np.testing.assert_allclose(
            enumerate_gradient(gen, rec, x4, threads=3).flat(),
            enumerate_gradient(gen, rec, x4, threads=1).flat(),
            rtol=1e-14,
        )

    def test_step_range(self, two_layer_pair, x4):
        """Test a finite-difference step outside its range"""
        gen, rec = two_layer_pair
        with pytest.raises(InvalidParameterError):
            finite_diff_gradient(gen, rec, x4, h=1e-2)


class TestOptimalBaseline:
    """Test b* = E[f s^2] / E[s^2] and the exact LR variance"""

    def test_optimal_minimizes_variance(self, two_layer_pair):
        """Test shifting b* never lowers the exact variance"""
        gen, rec = two_layer_pair
        x = np.ones(4)
        moments = score_moments(gen, rec, x)
        values, degenerate = optimal_baselines(gen, rec, x, moments=moments)
        assert not degenerate.any()
        best = lr_variance_exact(gen, rec, x, values, moments=moments)
        for shift in (-0.5, 0.5):
            assert (best <= lr_variance_exact(gen, rec, x, values + shift, moments=moments) + 1e-12).all()

    def test_zero_pixel_is_degenerate(self, two_layer_pair, x4):
        """Test weights on zero pixels are flagged degenerate"""
        gen, rec = two_layer_pair
        _, degenerate = optimal_baselines(gen, rec, x4)
        assert degenerate[coordinate_index(rec, "layers.0.weight", (0, 1))]
        assert not degenerate[coordinate_index(rec, "layers.0.weight", (0, 0))]

    def test_single_coordinate(self, two_layer_pair, x4):
        """Test b* for one coordinate"""
        gen, rec = two_layer_pair
        moments = score_moments(gen, rec, x4)
        index = coordinate_index(rec, "layers.1.weight", (2, 1))
        result = optimal_baseline(gen, rec, x4, index, moments=moments)
        assert result.value == pytest.approx(moments.mean_fs2[index] / moments.mean_s2[index])
        assert result.to_dict()["coordinate"] == index

    def test_coordinate_index(self, two_layer_pair):
        """Test flat coordinate lookup"""
        _, rec = two_layer_pair
        assert coordinate_index(rec, "layers.0.weight") == 0
        assert coordinate_index(rec, "layers.0.bias", (1,)) == 9
        with pytest.raises(InvalidParameterError):
            coordinate_index(rec, "top_logits")

    def test_degenerate_coordinate(self, two_layer_pair):
        """Test a zero pixel makes the matching weight score identically zero"""
        gen, rec = two_layer_pair
        x = np.array([0.0, 1.0, 1.0, 1.0])
        index = coordinate_index(rec, "layers.0.weight", (0, 0))
        result = optimal_baseline(gen, rec, x, index)
        assert result.degenerate
        with pytest.raises(DegenerateCoordinateError):
            optimal_baseline(gen, rec, x, index, strict=True)

    def test_out_of_range(self, two_layer_pair, x4):
        """Test a coordinate past the last parameter"""
        gen, rec = two_layer_pair
        with pytest.raises(InvalidParameterError):
            optimal_baseline(gen, rec, x4, rec.parameter_count)

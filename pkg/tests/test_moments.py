"""
Tests for Monte-Carlo estimator moments
"""
import numpy as np
import pytest

from src.core.errors import InvalidParameterError, ShapeMismatchError, UnknownEstimatorError
from src.services.oracle.enumeration import enumerate_gradient
from src.services.oracle.moments import (
    MIN_TRIALS,
    MomentAccumulator,
    crn_report,
    estimator_moments,
    per_sample_estimates,
)
from src.services.sbn.network import NoiseState, UnitAddress


class TestMomentAccumulator:
    """Test pairwise merging of central moments"""

    def test_merge_matches_single_pass(self, rng):
        """Test merged chunks match one pass over all samples"""
        samples = rng.gamma(2.0, size=(500, 3))
        whole = MomentAccumulator.from_samples(samples)
        merged = (
            MomentAccumulator.from_samples(samples[:120])
            .merge(MomentAccumulator.from_samples(samples[120:121]))
            .merge(MomentAccumulator.from_samples(samples[121:]))
        )
        assert merged.n == whole.n
        for name in ("mean", "m2", "m3", "m4"):
            np.testing.assert_allclose(getattr(merged, name), getattr(whole, name), rtol=1e-10)


class TestPerSampleEstimates:
    """Test the flat per-sample estimate rows"""

    def test_rows_and_columns(self, two_layer_pair, x4, rng):
        """Test one row per sample and one column per parameter"""
        gen, rec = two_layer_pair
        noise = NoiseState.draw(rec.topology, rng, batch=6)
        for estimator_id in ("marginalized", "lr"):
            assert per_sample_estimates(estimator_id, gen, rec, x4, noise, 0.0).shape == (6, rec.parameter_count)

    def test_per_coordinate_baseline(self, two_layer_pair, x4, rng):
        """Test a constant per-coordinate baseline equals the scalar one"""
        gen, rec = two_layer_pair
        noise = NoiseState.draw(rec.topology, rng, batch=6)
        scalar = per_sample_estimates("lr", gen, rec, x4, noise, 0.7)
        vector = per_sample_estimates("lr", gen, rec, x4, noise, np.full(rec.parameter_count, 0.7))
        np.testing.assert_allclose(vector, scalar, rtol=1e-12, atol=1e-15)

    def test_per_coordinate_baseline_length(self, two_layer_pair, x4, rng):
        """Test a baseline vector of the wrong length"""
        gen, rec = two_layer_pair
        noise = NoiseState.draw(rec.topology, rng, batch=2)
        with pytest.raises(ShapeMismatchError):
            per_sample_estimates("lr", gen, rec, x4, noise, np.zeros(3))

    def test_unknown_estimator(self, two_layer_pair, x4, rng):
        """Test an unregistered estimator id"""
        gen, rec = two_layer_pair
        with pytest.raises(UnknownEstimatorError):
            per_sample_estimates("reinforce", gen, rec, x4, NoiseState.draw(rec.topology, rng))


class TestEstimatorMoments:
    """Test chunked moment estimation"""

    def test_too_few_trials(self, two_layer_pair, x4):
        """Test the minimum trial count"""
        gen, rec = two_layer_pair
        with pytest.raises(InvalidParameterError):
            estimator_moments("marginalized", gen, rec, None, x4, MIN_TRIALS - 1, seed=0)

    def test_unknown_estimator(self, two_layer_pair, x4):
        """Test an unregistered estimator id"""
        gen, rec = two_layer_pair
        with pytest.raises(UnknownEstimatorError):
            estimator_moments("reparam", gen, rec, None, x4, 2000, seed=0)

    def test_thread_count_does_not_matter(self, two_layer_pair, x4):
        """Test results do not depend on the thread count"""
        gen, rec = two_layer_pair
        single = estimator_moments("marginalized", gen, rec, None, x4, 3000, seed=5, chunk=700, threads=1)
        many = estimator_moments("marginalized", gen, rec, None, x4, 3000, seed=5, chunk=700, threads=4)
        np.testing.assert_array_equal(single.mean, many.mean)
        np.testing.assert_array_equal(single.variance, many.variance)

    @pytest.mark.parametrize("estimator_id,baseline", [("marginalized", None), ("lr", 0.0), ("lr", 1.5)])
    def test_unbiased(self, two_layer_pair, x4, estimator_id, baseline):
        """Test the Monte-Carlo mean lies within 5 standard errors of the exact gradient"""
        gen, rec = two_layer_pair
        exact = enumerate_gradient(gen, rec, x4).flat()
        report = estimator_moments(estimator_id, gen, rec, baseline, x4, 20000, seed=3, chunk=5000)
        assert report.trials == 20000
        z = np.abs(report.mean - exact) / np.maximum(report.stderr, 1e-12)
        assert z.max() < 5.0

    def test_frame(self, two_layer_pair, x4):
        """Test one frame row per coordinate"""
        gen, rec = two_layer_pair
        frame = estimator_moments("lr", gen, rec, 0.0, x4, 1000, seed=1).to_frame()
        assert len(frame) == rec.parameter_count
        assert set(frame["estimator"]) == {"lr"}
        assert (frame["variance"] >= 0).all()


class TestCrnReport:
    """Test the common-random-numbers statistics of one unit"""

    def test_identity_holds(self, two_layer_pair, x4):
        """Test the variance identity from one sample set"""
        gen, rec = two_layer_pair
        report = crn_report(gen, rec, x4, UnitAddress(0, 0), trials=4000, seed=2, chunk=1500)
        assert report.trials == 4000
        assert report.identity_residual < 1e-9
        assert report.to_dict()["layer"] == 0

    def test_shared_noise_correlates(self, two_layer_pair, x4):
        """Test f0 and f1 covary positively when the unit has descendants"""
        gen, rec = two_layer_pair
        report = crn_report(gen, rec, x4, UnitAddress(0, 1), trials=4000, seed=7)
        assert report.covariance > 0.0
        assert report.var_difference < report.independent_variance
        assert report.to_dict()["independent_variance"] == pytest.approx(report.var_f0 + report.var_f1)

    def test_invalid_unit(self, two_layer_pair, x4):
        """Test a unit outside its layer"""
        gen, rec = two_layer_pair
        with pytest.raises(InvalidParameterError):
            crn_report(gen, rec, x4, UnitAddress(0, 7), trials=100, seed=0)

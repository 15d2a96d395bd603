"""
Tests for the variational objective and the shared forward pass
"""
import numpy as np
import pytest

from src.core.errors import ShapeMismatchError
from src.services.objective import elbo
from src.services.objective.elbo import (
    check_pair,
    elbo_f,
    evaluate_sample,
    grad_generative,
    log_p_joint,
    log_q,
    objective_for_latents,
    sample_objective,
)
from src.services.oracle.enumeration import configurations, enumerate_expectation
from src.services.sbn.network import (
    Direction,
    LayerParams,
    ModelParams,
    NoiseState,
    SampleState,
    Topology,
    init_params,
    random_params,
)
from tests.conftest import make_pair


class TestElbo:
    """Test f = log p(x, z) - log q(z|x)"""

    def test_single_values_are_floats(self, two_layer_pair, x4):
        """Test a single sample gives float terms with f = log p - log q"""
        gen, rec = two_layer_pair
        z = SampleState([np.array([1.0, 0.0]), np.array([0.0, 1.0, 1.0])], x4)
        value = elbo_f(gen, rec, x4, z)
        assert isinstance(value.f, float)
        assert value.f == pytest.approx(value.log_p - value.log_q)
        assert value.log_p < 0 and value.log_q < 0

    def test_uniform_model(self, x4):
        """Test all-zero parameters make every factor Bernoulli(1/2)"""
        gen = init_params(Topology((3, 2), 4, Direction.GENERATIVE), scale=1e-300)
        rec = init_params(Topology((3, 2), 4, Direction.RECOGNITION), scale=1e-300)
        z = SampleState([np.array([1.0, 1.0]), np.array([0.0, 1.0, 0.0])], x4)
        value = elbo_f(gen, rec, x4, z)
        assert value.log_p == pytest.approx(-9 * np.log(2))
        assert value.log_q == pytest.approx(-5 * np.log(2))
        assert value.f == pytest.approx(-4 * np.log(2))

    def test_pair_mismatch(self, x4):
        """Test pairs whose layer sizes disagree"""
        gen, _ = make_pair((3, 2), 4)
        _, rec = make_pair((2, 2), 4)
        with pytest.raises(ShapeMismatchError):
            check_pair(gen, rec)
        with pytest.raises(ShapeMismatchError):
            check_pair(rec, gen)

    def test_log_p_needs_x(self, two_layer_pair):
        """Test log p(x, z) without an observation"""
        gen, _ = two_layer_pair
        z = SampleState([np.array([1.0, 0.0]), np.array([0.0, 1.0, 1.0])])
        with pytest.raises(ShapeMismatchError):
            log_p_joint(gen, None, z)

    def test_generative_gradient_matches_finite_differences(self, two_layer_pair, x4):
        """Test the generative gradient against central differences"""
        gen, _ = two_layer_pair
        z = SampleState([np.array([1.0, 0.0]), np.array([0.0, 1.0, 1.0])], x4)
        analytic = grad_generative(gen, x4, z).flat()
        base = gen.flat()
        h = 1e-6
        numeric = np.zeros_like(base)
        for j in range(base.shape[0]):
            step = np.zeros_like(base)
            step[j] = h
            numeric[j] = (log_p_joint(gen.with_flat(base + step), x4, z) - log_p_joint(gen.with_flat(base - step), x4, z)) / (2 * h)
        np.testing.assert_allclose(analytic, numeric, atol=1e-7)


class TestForwardPass:
    """Test the cached forward pass used by the estimators"""

    def test_matches_direct_evaluation(self, two_layer_pair, x4, rng):
        """Test the cached pass against elbo_f and log_q"""
        gen, rec = two_layer_pair
        noise = NoiseState.draw(rec.topology, rng, batch=16)
        forward = evaluate_sample(gen, rec, x4, noise)
        direct = elbo_f(gen, rec, forward.x, forward.sample())
        np.testing.assert_allclose(forward.f, direct.f, rtol=1e-12)
        np.testing.assert_allclose(forward.log_q, log_q(rec, forward.x, forward.sample()), rtol=1e-12)

    def test_objective_for_latents(self, two_layer_pair, x4, rng):
        """Test re-evaluating f from cached latents"""
        gen, rec = two_layer_pair
        forward = evaluate_sample(gen, rec, x4, NoiseState.draw(rec.topology, rng, batch=8))
        np.testing.assert_allclose(objective_for_latents(gen, rec, forward.x, forward.latents), forward.f, rtol=1e-12)

    def test_single_noise_gives_batch_of_one(self, two_layer_pair, x4, rng):
        """Test unbatched noise yields a batch of one"""
        gen, rec = two_layer_pair
        forward = evaluate_sample(gen, rec, x4, NoiseState.draw(rec.topology, rng))
        assert forward.batch_size == 1
        assert forward.f.shape == (1,)

    def test_batch_mismatch(self, two_layer_pair, rng):
        """Test an x batch that disagrees with the noise batch"""
        gen, rec = two_layer_pair
        x = np.zeros((3, 4))
        with pytest.raises(ShapeMismatchError):
            evaluate_sample(gen, rec, x, NoiseState.draw(rec.topology, rng, batch=5))

    def test_elbo_uses_module_log_p(self, two_layer_pair, x4, monkeypatch):
        """Test elbo_f resolves log_p_joint at call time"""
        gen, rec = two_layer_pair
        z = SampleState([np.array([1.0, 0.0]), np.array([0.0, 1.0, 1.0])], x4)
        monkeypatch.setattr(elbo, "log_p_joint", lambda gen, x, z: 0.0)
        assert elbo_f(gen, rec, x4, z).f == pytest.approx(-log_q(rec, x4, z))


class TestBound:
    """Test the objective against the exact marginal log p(x)"""

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_joint_is_normalized(self, seed):
        """Test p(x, z) sums to one over every x and z"""
        gen = random_params(Topology((2,), 2, Direction.GENERATIVE), seed=seed)
        latents = configurations(Topology((2,), 2, Direction.RECOGNITION), 0, 4)
        total = 0.0
        for bits in range(4):
            x = np.array([bits & 1, (bits >> 1) & 1], dtype=np.float64)
            total += np.exp(log_p_joint(gen, x, SampleState(latents))).sum()
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_bound_below_log_marginal(self, two_layer_pair, x4, rng):
        """Test the exact and sampled objective never exceed log p(x)"""
        gen, rec = two_layer_pair
        log_marginal = np.logaddexp.reduce(log_p_joint(gen, x4, SampleState(configurations(rec.topology, 0, 32))))
        assert enumerate_expectation(gen, rec, x4) <= log_marginal

        f = sample_objective(gen, rec, x4, NoiseState.draw(rec.topology, rng, batch=10_000))
        stderr = f.std(ddof=1) / np.sqrt(f.shape[0])
        assert f.mean() <= log_marginal + 4 * stderr

    def test_bound_is_tight_at_posterior(self, x3):
        """Test a recognition net equal to the posterior attains log p(x)"""
        gen = random_params(Topology((1,), 3, Direction.GENERATIVE), seed=4)
        log_p = log_p_joint(gen, x3, SampleState([np.array([[0.0], [1.0]])]))
        rec = ModelParams(
            Topology((1,), 3, Direction.RECOGNITION),
            [LayerParams(np.zeros((1, 3)), np.array([log_p[1] - log_p[0]]))],
        )
        assert enumerate_expectation(gen, rec, x3) == pytest.approx(np.logaddexp(log_p[0], log_p[1]), abs=1e-10)

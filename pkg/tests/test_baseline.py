"""
Tests for the input-dependent baseline
"""
import numpy as np
import pytest
import torch

from src.core.errors import CheckpointFormatError, InvalidParameterError, ShapeMismatchError
from src.services.estimators.baseline import BaselineModel, update_baseline
from src.services.estimators.likelihood_ratio import LearningSignals, lr_signals
from src.services.sbn.network import NoiseState


def constant_target(signals: LearningSignals, value: float) -> LearningSignals:
    return LearningSignals(
        f=np.full_like(signals.f, value),
        parents=signals.parents,
        baselines=signals.baselines,
        score=signals.score,
    )


class TestBaselineModel:
    """Test construction, regression and persistence"""

    @pytest.fixture
    def baseline(self, two_layer_pair):
        _, rec = two_layer_pair
        return BaselineModel.for_recognition(rec, hidden_dim=16, seed=4)

    @pytest.fixture
    def signals(self, two_layer_pair, x4, rng):
        gen, rec = two_layer_pair
        return lr_signals(gen, rec, np.tile(x4, (32, 1)), NoiseState.draw(rec.topology, rng, batch=32))

    def test_input_dims(self, baseline):
        """Test one regressor per recognition layer, sized by its input"""
        assert baseline.input_dims == [4, 2]
        assert baseline.num_layers == 2

    def test_values_shape(self, baseline, signals):
        """Test one baseline value per minibatch element and layer"""
        values = baseline.baseline_values(signals.parents)
        assert len(values) == 2
        assert all(value.shape == (32,) for value in values)

    def test_seeded_construction(self, two_layer_pair, signals):
        """Test the same seed gives the same regressors"""
        _, rec = two_layer_pair
        first = BaselineModel.for_recognition(rec, hidden_dim=16, seed=4).input_baselines(signals.parents)
        second = BaselineModel.for_recognition(rec, hidden_dim=16, seed=4).input_baselines(signals.parents)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)

    def test_construction_leaves_global_rng(self, two_layer_pair):
        """Test seeding does not disturb the global torch RNG"""
        _, rec = two_layer_pair
        torch.manual_seed(0)
        expected = torch.rand(1)
        torch.manual_seed(0)
        BaselineModel.for_recognition(rec, hidden_dim=16, seed=9)
        assert torch.equal(torch.rand(1), expected)

    def test_zero_step_is_noop(self, baseline, signals):
        """Test a zero step size leaves the baseline untouched"""
        before = [p.detach().clone() for p in baseline.parameters()]
        baseline.update(signals, 0.0)
        assert float(baseline.running_mean) == 0.0
        assert int(baseline.updates) == 0
        for old, new in zip(before, baseline.parameters()):
            assert torch.equal(old, new)

    def test_negative_step(self, baseline, signals):
        """Test a negative step size"""
        with pytest.raises(InvalidParameterError):
            baseline.update(signals, -1e-3)

    def test_running_mean(self, baseline, signals):
        """Test the running mean after one update"""
        update_baseline(baseline, signals, 1e-3)
        assert float(baseline.running_mean) == pytest.approx((1.0 - baseline.decay) * signals.f.mean())
        assert int(baseline.updates) == 1

    def test_regression_reduces_residual(self, baseline, signals):
        """Test the regressors fit a constant target"""
        target = constant_target(signals, 5.0)

        def loss():
            values = baseline.baseline_values(target.parents)
            return float(np.mean([np.mean((target.f - value) ** 2) for value in values]))

        initial = loss()
        for _ in range(200):
            baseline.update(target, 1e-2)
        assert loss() < 0.1 * initial

    def test_incompatible_inputs(self, baseline, signals):
        """Test the wrong number of parent inputs"""
        with pytest.raises(ShapeMismatchError):
            baseline.input_baselines(signals.parents[:1])

    def test_invalid_decay(self):
        """Test the running-mean decay range"""
        with pytest.raises(InvalidParameterError):
            BaselineModel([3], decay=1.0)

    def test_save_and_load(self, baseline, signals, tmp_path):
        """Test a saved baseline predicts the same values"""
        baseline.update(signals, 1e-2)
        path = baseline.save(tmp_path / "baseline_0.pt")
        restored = BaselineModel.load(path)
        assert float(restored.running_mean) == pytest.approx(float(baseline.running_mean))
        for a, b in zip(baseline.baseline_values(signals.parents), restored.baseline_values(signals.parents)):
            np.testing.assert_allclose(a, b)

    def test_load_garbage(self, tmp_path):
        """Test loading a file that is not a baseline"""
        path = tmp_path / "bad.pt"
        path.write_bytes(b"garbage")
        with pytest.raises(CheckpointFormatError):
            BaselineModel.load(path)

    def test_save_keeps_optimizer_settings(self, two_layer_pair, signals, tmp_path):
        """Test RMSprop decay and eps survive a round trip"""
        _, rec = two_layer_pair
        baseline = BaselineModel.for_recognition(rec, hidden_dim=8, seed=2, rmsprop_decay=0.5, rmsprop_eps=1e-6)
        baseline.update(signals, 1e-2)
        restored = BaselineModel.load(baseline.save(tmp_path / "baseline_1.pt"))
        assert restored.rmsprop_decay == 0.5
        assert restored.rmsprop_eps == 1e-6
        group = restored.optimizer.param_groups[0]
        assert group["alpha"] == 0.5
        assert group["eps"] == 1e-6

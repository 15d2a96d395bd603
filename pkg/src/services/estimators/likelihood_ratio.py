"""
Likelihood-ratio (score function) estimator with a baseline

For recognition layer l the estimate is (f - b_l) * d log q_l / d phi_l,
with one reparameterized sample z per noise element.
"""
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from src.core.errors import ShapeMismatchError
from src.services.estimators.baseline import BaselineModel
from src.services.objective.elbo import ForwardPass, Objective, evaluate_sample
from src.services.sbn.gradients import GradientAccumulator, LogitSignals
from src.services.sbn.network import ModelParams, NoiseState

BaselineLike = Union[None, float, BaselineModel]


@dataclass
class LearningSignals:
    """Per-sample quantities the baseline learns from."""
    f: np.ndarray                # [B]
    parents: List[np.ndarray]    # recognition layer inputs, [B, fan_in]
    baselines: List[np.ndarray]  # b_l per layer, [B]
    score: LogitSignals          # z - mu per recognition layer

    @property
    def residuals(self) -> List[np.ndarray]:
        return [self.f - value for value in self.baselines]

    def to_logit_signals(self, include_direct_term: bool = False) -> LogitSignals:
        signals = {}
        for index, residual in enumerate(self.residuals):
            key = f"layers.{index}"
            signal = residual[:, None] * self.score.signals[key]
            if include_direct_term:
                signal = signal - self.score.signals[key]
            signals[key] = signal
        return LogitSignals(signals=signals, parents=dict(self.score.parents))


def recognition_score(rec: ModelParams, forward: ForwardPass) -> LogitSignals:
    """Score signals of q(z|x) read off an evaluated sample."""
    signals, parents = {}, {}
    for latent in range(rec.topology.num_layers):
        key = f"layers.{latent}"
        signals[key] = forward.latents[latent] - forward.rec_means(latent)
        parents[key] = forward.x if latent == 0 else forward.latents[latent - 1]
    return LogitSignals(signals=signals, parents=parents)


def _baseline_values(baseline: BaselineLike, parents: List[np.ndarray], batch: int) -> List[np.ndarray]:
    if baseline is None:
        return [np.zeros(batch) for _ in parents]
    if isinstance(baseline, BaselineModel):
        return baseline.baseline_values(parents)
    return [np.full(batch, float(baseline)) for _ in parents]


def lr_signals(
    gen: ModelParams,
    rec: ModelParams,
    x: np.ndarray,
    noise: NoiseState,
    baseline: BaselineLike = None,
    forward: Optional[ForwardPass] = None,
    objective: Optional[Objective] = None,
) -> LearningSignals:
    if isinstance(baseline, BaselineModel):
        baseline.check_compatible(rec)
    if forward is None:
        forward = evaluate_sample(gen, rec, x, noise)
    score = recognition_score(rec, forward)
    parents = [score.parents[f"layers.{latent}"] for latent in range(rec.topology.num_layers)]
    f = forward.f
    if objective is not None:
        f = np.broadcast_to(objective(gen, rec, forward.x, forward.latents), f.shape).astype(np.float64)
    baselines = _baseline_values(baseline, parents, f.shape[0])
    if any(value.shape != f.shape for value in baselines):
        raise ShapeMismatchError("Baseline values do not match the batch")
    return LearningSignals(f=f, parents=parents, baselines=baselines, score=score)


def estimate_lr(
    gen: ModelParams,
    rec: ModelParams,
    baseline: BaselineLike,
    x: np.ndarray,
    noise: NoiseState,
    include_direct_term: bool = False,
    objective: Optional[Objective] = None,
) -> Tuple[GradientAccumulator, LearningSignals]:
    """Batch-mean LR gradient for the recognition net and the signals for update_baseline."""
    signals = lr_signals(gen, rec, x, noise, baseline, objective=objective)
    return signals.to_logit_signals(include_direct_term).to_gradient(rec), signals

"""
Layer-wise variance of the per-unit recognition gradient

For every latent unit i the profiler draws fresh noise per image and records
the single-sample gradient w.r.t. that unit's mean mu_i (or its logit):

    marginalized  mean: f1 - f0                        logit: (f1 - f0) mu (1 - mu)
    lr            mean: (f - b)(z/mu - (1-z)/(1-mu))   logit: (f - b)(z - mu)

Variances are pooled over images x samples and averaged within each layer.
All estimators see the same images and the same noise.
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from loguru import logger

from src.core.errors import EmptyDatasetError, InvalidParameterError, UnknownEstimatorError
from src.core.parallel import parallel_map
from src.core.seeding import Stream, derive_rng
from src.services.estimators.baseline import BaselineModel, update_baseline
from src.services.estimators.likelihood_ratio import BaselineLike, lr_signals
from src.services.estimators.marginalized import marginalized_signals
from src.services.objective.elbo import ForwardPass, Objective, check_pair, evaluate_sample
from src.services.oracle.moments import ESTIMATOR_IDS, MomentAccumulator
from src.services.sbn.network import PROB_EPS, ModelParams, NoiseState

SPACES = ("mean", "logit")


@dataclass
class VarianceReport:
    estimator_id: str
    space: str
    layer_variances: List[float]       # latent order, layer nearest the data first
    unit_variances: List[np.ndarray]
    images: int
    samples: int

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "estimator": self.estimator_id,
            "space": self.space,
            "layer": [f"h{latent + 1}" for latent in range(len(self.layer_variances))],
            "variance": self.layer_variances,
            "units": [variances.shape[0] for variances in self.unit_variances],
            "samples": self.samples,
        })


def _marginalized_unit_gradients(gen, rec, forward: ForwardPass, space: str, objective) -> List[np.ndarray]:
    differences = marginalized_signals(gen, rec, forward.x, None, threads=1, forward=forward, objective=objective)
    gradients = []
    for latent in range(rec.topology.num_layers):
        d = differences.differences(latent)
        if space == "logit":
            means = forward.rec_means(latent)
            d = d * means * (1.0 - means)
        gradients.append(d)
    return gradients


def _lr_unit_gradients(gen, rec, forward: ForwardPass, space: str, baseline: BaselineLike, objective) -> List[np.ndarray]:
    signals = lr_signals(gen, rec, forward.x, None, baseline, forward=forward, objective=objective)
    gradients = []
    for latent, residual in enumerate(signals.residuals):
        z = forward.latents[latent]
        means = forward.rec_means(latent)
        if space == "logit":
            score = z - means
        else:
            means = np.clip(means, PROB_EPS, 1.0 - PROB_EPS)
            score = z / means - (1.0 - z) / (1.0 - means)
        gradients.append(residual[:, None] * score)
    return gradients


def profile_variance(
    gen: ModelParams,
    rec: ModelParams,
    images: np.ndarray,
    samples_per_image: int,
    estimator_ids: Sequence[str] = ESTIMATOR_IDS,
    seed: int = 0,
    space: str = "mean",
    baseline: BaselineLike = None,
    threads: Optional[int] = None,
    objective: Optional[Objective] = None,
) -> Dict[str, VarianceReport]:
    """Per-layer averaged per-unit gradient variance for each estimator."""
    check_pair(gen, rec)
    if samples_per_image < 2:
        raise InvalidParameterError(f"samples_per_image must be >= 2, got {samples_per_image}")
    if space not in SPACES:
        raise InvalidParameterError(f"Unknown profile space {space!r}; expected one of {', '.join(SPACES)}")
    unknown = [estimator_id for estimator_id in estimator_ids if estimator_id not in ESTIMATOR_IDS]
    if unknown:
        raise UnknownEstimatorError(f"Unknown estimator(s) {', '.join(unknown)}")
    images = np.atleast_2d(np.asarray(images))
    if images.shape[0] == 0:
        raise EmptyDatasetError("Variance profiling needs at least one image")

    def run_image(index: int) -> Dict[str, MomentAccumulator]:
        x = images[index].astype(rec.dtype)
        noise = NoiseState.draw(rec.topology, derive_rng(seed, Stream.PROFILE, index), batch=samples_per_image, dtype=rec.dtype)
        forward = evaluate_sample(gen, rec, x, noise)
        result = {}
        for estimator_id in estimator_ids:
            if estimator_id == "marginalized":
                gradients = _marginalized_unit_gradients(gen, rec, forward, space, objective)
            else:
                gradients = _lr_unit_gradients(gen, rec, forward, space, baseline, objective)
            result[estimator_id] = MomentAccumulator.from_samples(np.concatenate(gradients, axis=1))
        return result

    parts = parallel_map(run_image, range(images.shape[0]), threads)
    offsets = rec.topology.latent_offsets() + [rec.topology.total_units]

    reports: Dict[str, VarianceReport] = {}
    for estimator_id in estimator_ids:
        total = parts[0][estimator_id]
        for part in parts[1:]:
            total = total.merge(part[estimator_id])
        variances = np.maximum(total.m2 / (total.n - 1), 0.0)
        units = [variances[offsets[latent]:offsets[latent + 1]] for latent in range(rec.topology.num_layers)]
        reports[estimator_id] = VarianceReport(
            estimator_id=estimator_id,
            space=space,
            layer_variances=[float(values.mean()) for values in units],
            unit_variances=units,
            images=images.shape[0],
            samples=total.n,
        )
        logger.info(
            f"{estimator_id} ({space} space): per-layer variance "
            + ", ".join(f"h{latent + 1}={value:.3e}" for latent, value in enumerate(reports[estimator_id].layer_variances))
        )
    return reports


def warm_baseline(
    gen: ModelParams,
    rec: ModelParams,
    images: np.ndarray,
    updates: int,
    seed: int,
    batch_size: int = 100,
    step_size: float = 1e-3,
    hidden_dim: int = 100,
    decay: float = 0.9,
) -> BaselineModel:
    """Fit a fresh input-dependent baseline to fixed nets for `updates` minibatches."""
    baseline = BaselineModel.for_recognition(rec, hidden_dim=hidden_dim, decay=decay, seed=seed)
    images = np.atleast_2d(np.asarray(images))
    if images.shape[0] == 0:
        raise EmptyDatasetError("Baseline warmup needs at least one image")
    for step in range(updates):
        rng = derive_rng(seed, Stream.BASELINE, step)
        batch = images[rng.integers(0, images.shape[0], size=batch_size)].astype(rec.dtype)
        noise = NoiseState.draw(rec.topology, rng, batch=batch_size, dtype=rec.dtype)
        update_baseline(baseline, lr_signals(gen, rec, batch, noise, baseline), step_size)
    logger.debug(f"Baseline warmed up for {updates} updates (running mean {float(baseline.running_mean):.4f})")
    return baseline

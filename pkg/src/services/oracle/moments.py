"""
Monte-Carlo moments of the gradient estimators

Trials run in chunks with counter-derived noise seeds; chunk statistics are
merged pairwise in chunk order, so results do not depend on thread count.
"""
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import pandas as pd
from loguru import logger

from src.core.errors import InvalidParameterError, ShapeMismatchError, UnknownEstimatorError
from src.core.parallel import parallel_map
from src.core.seeding import Stream, derive_rng
from src.services.estimators.baseline import BaselineModel
from src.services.estimators.likelihood_ratio import lr_signals
from src.services.estimators.marginalized import flipped_objective, marginalized_signals
from src.services.objective.elbo import Objective, evaluate_sample
from src.services.sbn.network import ModelParams, NoiseState, UnitAddress

ESTIMATOR_IDS = ("marginalized", "lr")
MIN_TRIALS = 1000

Baseline = Union[None, float, np.ndarray, BaselineModel]


def per_sample_estimates(
    estimator_id: str,
    gen: ModelParams,
    rec: ModelParams,
    x: np.ndarray,
    noise: NoiseState,
    baseline: Baseline = None,
    objective: Optional[Objective] = None,
) -> np.ndarray:
    """Flat single-sample gradient estimates, one row per noise element."""
    if estimator_id == "marginalized":
        return marginalized_signals(gen, rec, x, noise, threads=1, objective=objective).logit_signals().per_sample(rec)
    if estimator_id == "lr":
        if isinstance(baseline, np.ndarray) and baseline.ndim == 1:
            # one scalar baseline per coordinate
            if baseline.shape[0] != rec.parameter_count:
                raise ShapeMismatchError(f"Per-coordinate baseline has {baseline.shape[0]} entries, expected {rec.parameter_count}")
            signals = lr_signals(gen, rec, x, noise, None, objective=objective)
            return (signals.f[:, None] - baseline[None, :]) * signals.score.per_sample(rec)
        return lr_signals(gen, rec, x, noise, baseline, objective=objective).to_logit_signals().per_sample(rec)
    raise UnknownEstimatorError(f"Unknown estimator {estimator_id!r}; expected one of {', '.join(ESTIMATOR_IDS)}")


@dataclass
class MomentAccumulator:
    """Central moments up to order four, mergeable in any grouping."""
    n: int
    mean: np.ndarray
    m2: np.ndarray
    m3: np.ndarray
    m4: np.ndarray

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "MomentAccumulator":
        mean = samples.mean(axis=0)
        centered = samples - mean
        squared = centered * centered
        return cls(
            n=samples.shape[0],
            mean=mean,
            m2=squared.sum(axis=0),
            m3=(squared * centered).sum(axis=0),
            m4=(squared * squared).sum(axis=0),
        )

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        na, nb = float(self.n), float(other.n)
        n = na + nb
        delta = other.mean - self.mean
        delta2 = delta * delta
        m2 = self.m2 + other.m2 + delta2 * na * nb / n
        m3 = (
            self.m3 + other.m3
            + delta2 * delta * na * nb * (na - nb) / (n * n)
            + 3.0 * delta * (na * other.m2 - nb * self.m2) / n
        )
        m4 = (
            self.m4 + other.m4
            + delta2 * delta2 * na * nb * (na * na - na * nb + nb * nb) / (n ** 3)
            + 6.0 * delta2 * (na * na * other.m2 + nb * nb * self.m2) / (n * n)
            + 4.0 * delta * (na * other.m3 - nb * self.m3) / n
        )
        return MomentAccumulator(n=self.n + other.n, mean=self.mean + delta * nb / n, m2=m2, m3=m3, m4=m4)


@dataclass
class MomentReport:
    """Per-coordinate Monte-Carlo mean and variance of an estimator."""
    estimator_id: str
    mean: np.ndarray
    variance: np.ndarray
    stderr: np.ndarray
    variance_stderr: np.ndarray
    trials: int

    @classmethod
    def from_accumulator(cls, estimator_id: str, acc: MomentAccumulator) -> "MomentReport":
        n = acc.n
        variance = acc.m2 / (n - 1)
        fourth = acc.m4 / n
        # Var of the sample variance: (mu4 - sigma^4 (n-3)/(n-1)) / n
        variance_var = (fourth - variance * variance * (n - 3) / (n - 1)) / n
        return cls(
            estimator_id=estimator_id,
            mean=acc.mean,
            variance=np.maximum(variance, 0.0),
            stderr=np.sqrt(np.maximum(variance, 0.0) / n),
            variance_stderr=np.sqrt(np.maximum(variance_var, 0.0)),
            trials=n,
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "coordinate": np.arange(self.mean.shape[0]),
            "mean": self.mean,
            "variance": self.variance,
            "stderr": self.stderr,
            "variance_stderr": self.variance_stderr,
        }).assign(estimator=self.estimator_id, trials=self.trials)


def estimator_moments(
    estimator_id: str,
    gen: ModelParams,
    rec: ModelParams,
    baseline: Baseline,
    x: np.ndarray,
    trials: int,
    seed: int,
    chunk: int = 10000,
    threads: Optional[int] = None,
    objective: Optional[Objective] = None,
) -> MomentReport:
    if estimator_id not in ESTIMATOR_IDS:
        raise UnknownEstimatorError(f"Unknown estimator {estimator_id!r}; expected one of {', '.join(ESTIMATOR_IDS)}")
    if trials < MIN_TRIALS:
        raise InvalidParameterError(f"Moment estimation needs at least {MIN_TRIALS} trials, got {trials}")
    sizes = [min(chunk, trials - start) for start in range(0, trials, chunk)]

    def run_chunk(item):
        index, size = item
        noise = NoiseState.draw(rec.topology, derive_rng(seed, Stream.NOISE, index), batch=size)
        return MomentAccumulator.from_samples(per_sample_estimates(estimator_id, gen, rec, x, noise, baseline, objective))

    parts = parallel_map(run_chunk, list(enumerate(sizes)), threads)
    total = parts[0]
    for part in parts[1:]:
        total = total.merge(part)
    logger.debug(f"{estimator_id}: {trials} trials over {len(parts)} chunks")
    return MomentReport.from_accumulator(estimator_id, total)


@dataclass
class CrnReport:
    """Statistics of the two clamped objectives of one unit from a shared sample set."""
    unit: UnitAddress
    var_f0: float
    var_f1: float
    covariance: float
    var_difference: float
    trials: int

    @property
    def identity_residual(self) -> float:
        """|Var(f1 - f0) - (Var f0 + Var f1 - 2 Cov)| relative to max(1, Var(f1 - f0))."""
        rhs = self.var_f0 + self.var_f1 - 2.0 * self.covariance
        return abs(self.var_difference - rhs) / max(1.0, abs(self.var_difference))

    @property
    def independent_variance(self) -> float:
        """Var(f1 - f0) had the two simulations used independent noise."""
        return self.var_f0 + self.var_f1

    def to_dict(self) -> dict:
        return {
            "layer": self.unit.layer,
            "unit": self.unit.unit,
            "var_f0": self.var_f0,
            "var_f1": self.var_f1,
            "covariance": self.covariance,
            "var_difference": self.var_difference,
            "identity_residual": self.identity_residual,
            "independent_variance": self.independent_variance,
            "trials": self.trials,
        }


def crn_report(
    gen: ModelParams,
    rec: ModelParams,
    x: np.ndarray,
    unit: UnitAddress,
    trials: int,
    seed: int,
    chunk: int = 10000,
) -> CrnReport:
    unit.validate(rec.topology)
    f0_parts, f1_parts = [], []
    for index, start in enumerate(range(0, trials, chunk)):
        size = min(chunk, trials - start)
        noise = NoiseState.draw(rec.topology, derive_rng(seed, Stream.NOISE, index), batch=size)
        forward = evaluate_sample(gen, rec, x, noise)
        flipped = flipped_objective(gen, rec, forward, unit.layer, np.array([unit.unit]))[0]
        on = forward.latents[unit.layer][:, unit.unit] == 1
        f1_parts.append(np.where(on, forward.f, flipped))
        f0_parts.append(np.where(on, flipped, forward.f))
    f0 = np.concatenate(f0_parts)
    f1 = np.concatenate(f1_parts)
    covariance = np.cov(f0, f1, ddof=1)
    return CrnReport(
        unit=unit,
        var_f0=float(covariance[0, 0]),
        var_f1=float(covariance[1, 1]),
        covariance=float(covariance[0, 1]),
        var_difference=float(np.var(f1 - f0, ddof=1)),
        trials=trials,
    )

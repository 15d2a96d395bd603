"""
Exact expectations and gradients by enumerating every latent configuration

Only usable for small nets: the recognition net must have at most
ENUMERATION_CAP latent units. x is a single image. All arithmetic is 64-bit.
Configuration weights use the exact (unclamped) q(z|x), so they sum to one.
"""
from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple, Union

import numpy as np
from loguru import logger

from src.core.errors import DegenerateCoordinateError, EnumerationCapError, InvalidParameterError, ShapeMismatchError
from src.core.parallel import parallel_map
from src.services.objective.elbo import Objective, check_pair, objective_for_latents, rec_logits_for
from src.services.sbn.gradients import GradientAccumulator, LogitSignals
from src.services.sbn.network import ModelParams, Topology, sigmoid

ENUMERATION_CAP = 20
CONFIG_CHUNK = 1 << 12


def check_enumerable(topology: Topology) -> None:
    if topology.total_units > ENUMERATION_CAP:
        raise EnumerationCapError(topology.total_units, ENUMERATION_CAP)


def configurations(topology: Topology, start: int, stop: int) -> List[np.ndarray]:
    """Latent layers for configurations start..stop-1; bit m of the index is unit m."""
    index = np.arange(start, stop, dtype=np.int64)
    bits = ((index[:, None] >> np.arange(topology.total_units, dtype=np.int64)) & 1).astype(np.float64)
    offsets = topology.latent_offsets()
    return [bits[:, offset:offset + topology.latent_size(latent)] for latent, offset in enumerate(offsets)]


def _log_sigmoid(logits: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -logits)


@dataclass
class ConfigurationChunk:
    """Exact q, f and recognition score signals for a block of configurations."""
    q: np.ndarray
    f: np.ndarray
    score: LogitSignals


def _evaluate_chunk(
    gen: ModelParams,
    rec: ModelParams,
    x: np.ndarray,
    start: int,
    stop: int,
    objective: Objective,
) -> ConfigurationChunk:
    latents = configurations(rec.topology, start, stop)
    count = stop - start
    xb = np.broadcast_to(x, (count, x.shape[-1]))
    log_q = np.zeros(count)
    signals, parents = {}, {}
    for latent in range(rec.topology.num_layers):
        logits = rec_logits_for(rec, latent, xb, latents)
        z = latents[latent]
        log_q += (z * _log_sigmoid(logits) + (1.0 - z) * _log_sigmoid(-logits)).sum(axis=-1)
        signals[f"layers.{latent}"] = z - sigmoid(logits)
        parents[f"layers.{latent}"] = xb if latent == 0 else latents[latent - 1]
    f = np.asarray(objective(gen, rec, xb, latents), dtype=np.float64)
    f = np.broadcast_to(f, (count,))
    return ConfigurationChunk(q=np.exp(log_q), f=f, score=LogitSignals(signals, parents))


def iterate_configurations(
    gen: ModelParams,
    rec: ModelParams,
    x: np.ndarray,
    objective: Optional[Objective] = None,
    threads: Optional[int] = None,
) -> Iterator[ConfigurationChunk]:
    check_pair(gen, rec)
    check_enumerable(rec.topology)
    if x.ndim != 1:
        raise ShapeMismatchError("Exact enumeration takes a single image")
    objective = objective or objective_for_latents
    total = 1 << rec.topology.total_units
    bounds = [(start, min(start + CONFIG_CHUNK, total)) for start in range(0, total, CONFIG_CHUNK)]
    # Chunks are evaluated in parallel but always reduced in index order
    yield from parallel_map(lambda bound: _evaluate_chunk(gen, rec, x, bound[0], bound[1], objective), bounds, threads)


def enumerate_expectation(
    gen: ModelParams,
    rec: ModelParams,
    x: np.ndarray,
    objective: Optional[Objective] = None,
    threads: Optional[int] = None,
) -> float:
    """F = sum_z q(z|x) f(x, z)."""
    return float(sum(np.dot(chunk.q, chunk.f) for chunk in iterate_configurations(gen, rec, x, objective, threads)))


def _weighted_gradient(rec: ModelParams, chunk: ConfigurationChunk, weights: np.ndarray) -> GradientAccumulator:
    batch = weights.shape[0]
    scaled = LogitSignals(
        signals={key: signal * weights[:, None] for key, signal in chunk.score.signals.items()},
        parents=chunk.score.parents,
    )
    return scaled.to_gradient(rec).scaled(batch)


def enumerate_gradient(
    gen: ModelParams,
    rec: ModelParams,
    x: np.ndarray,
    objective: Optional[Objective] = None,
    threads: Optional[int] = None,
) -> GradientAccumulator:
    """sum_z f(x, z) grad q(z|x) = E_q[f * score], f held fixed."""
    total = GradientAccumulator.zeros_like(rec)
    for chunk in iterate_configurations(gen, rec, x, objective, threads):
        total = total + _weighted_gradient(rec, chunk, chunk.q * chunk.f)
    return total


def finite_diff_gradient(
    gen: ModelParams,
    rec: ModelParams,
    x: np.ndarray,
    h: float = 1e-5,
    objective: Optional[Objective] = None,
    threads: Optional[int] = None,
) -> GradientAccumulator:
    """Central differences of enumerate_expectation over every recognition parameter."""
    if not 1e-7 <= h <= 1e-3:
        raise InvalidParameterError(f"Finite-difference step must lie in [1e-7, 1e-3], got {h}")
    check_enumerable(rec.topology)
    base = rec.flat()
    grad = np.zeros_like(base)
    for j in range(base.shape[0]):
        plus = base.copy()
        plus[j] += h
        minus = base.copy()
        minus[j] -= h
        f_plus = enumerate_expectation(gen, rec.with_flat(plus), x, objective, threads)
        f_minus = enumerate_expectation(gen, rec.with_flat(minus), x, objective, threads)
        grad[j] = (f_plus - f_minus) / (2.0 * h)
    logger.debug(f"Finite differences over {base.shape[0]} coordinates (h={h})")
    return GradientAccumulator.from_flat(rec, grad)


@dataclass
class ScoreMoments:
    """
    Exact per-coordinate moments of the recognition score s under q.

    Enough to evaluate the variance of (f - b) * s for any scalar b.
    """
    mean_s: np.ndarray
    mean_s2: np.ndarray
    mean_fs: np.ndarray
    mean_fs2: np.ndarray
    mean_f2s2: np.ndarray
    mean_f: float

    def lr_variance(self, baseline: Union[float, np.ndarray]) -> np.ndarray:
        b = np.asarray(baseline, dtype=np.float64)
        second = self.mean_f2s2 - 2.0 * b * self.mean_fs2 + b * b * self.mean_s2
        first = self.mean_fs - b * self.mean_s
        return np.maximum(second - first * first, 0.0)


def score_moments(
    gen: ModelParams,
    rec: ModelParams,
    x: np.ndarray,
    objective: Optional[Objective] = None,
    threads: Optional[int] = None,
) -> ScoreMoments:
    count = rec.parameter_count
    sums = {name: np.zeros(count) for name in ("s", "s2", "fs", "fs2", "f2s2")}
    mean_f = 0.0
    for chunk in iterate_configurations(gen, rec, x, objective, threads):
        s = chunk.score.per_sample(rec)
        s2 = s * s
        q, f = chunk.q, chunk.f
        sums["s"] += q @ s
        sums["s2"] += q @ s2
        sums["fs"] += (q * f) @ s
        sums["fs2"] += (q * f) @ s2
        sums["f2s2"] += (q * f * f) @ s2
        mean_f += float(np.dot(q, f))
    return ScoreMoments(
        mean_s=sums["s"],
        mean_s2=sums["s2"],
        mean_fs=sums["fs"],
        mean_fs2=sums["fs2"],
        mean_f2s2=sums["f2s2"],
        mean_f=mean_f,
    )


@dataclass
class OptimalBaseline:
    coordinate: int
    value: float
    second_moment: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "coordinate": self.coordinate,
            "value": self.value,
            "second_moment": self.second_moment,
            "degenerate": self.degenerate,
        }


def coordinate_index(params: ModelParams, key: str, index: Tuple[int, ...] = ()) -> int:
    """Flat index of params[key][index] in named_arrays order."""
    offset = 0
    for name, value in params.named_arrays().items():
        if name == key:
            return offset + int(np.ravel_multi_index(index, value.shape)) if index else offset
        offset += value.size
    raise InvalidParameterError(f"Unknown parameter {key!r}")


def optimal_baselines(
    gen: ModelParams,
    rec: ModelParams,
    x: np.ndarray,
    moments: Optional[ScoreMoments] = None,
    threads: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """b* = E[f s^2] / E[s^2] for every coordinate, plus the degenerate mask (s == 0 identically)."""
    moments = moments or score_moments(gen, rec, x, threads=threads)
    degenerate = moments.mean_s2 <= 0.0
    safe = np.where(degenerate, 1.0, moments.mean_s2)
    values = np.where(degenerate, 0.0, moments.mean_fs2 / safe)
    return values, degenerate


def optimal_baseline(
    gen: ModelParams,
    rec: ModelParams,
    x: np.ndarray,
    coordinate: int,
    moments: Optional[ScoreMoments] = None,
    strict: bool = False,
) -> OptimalBaseline:
    """b* for one coordinate; strict mode refuses coordinates whose score is identically zero."""
    moments = moments or score_moments(gen, rec, x)
    if not 0 <= coordinate < moments.mean_s2.shape[0]:
        raise InvalidParameterError(f"Coordinate {coordinate} out of range [0, {moments.mean_s2.shape[0]})")
    values, degenerate = optimal_baselines(gen, rec, x, moments=moments)
    if degenerate[coordinate]:
        if strict:
            raise DegenerateCoordinateError(f"Coordinate {coordinate} has an identically zero score")
        logger.warning(f"Coordinate {coordinate} has an identically zero score; no optimal baseline")
    return OptimalBaseline(
        coordinate=coordinate,
        value=float(values[coordinate]),
        second_moment=float(moments.mean_s2[coordinate]),
        degenerate=bool(degenerate[coordinate]),
    )


def lr_variance_exact(
    gen: ModelParams,
    rec: ModelParams,
    x: np.ndarray,
    baseline: Union[float, np.ndarray],
    moments: Optional[ScoreMoments] = None,
) -> np.ndarray:
    """Exact per-coordinate variance of the single-sample LR estimator with a scalar baseline."""
    moments = moments or score_moments(gen, rec, x)
    return moments.lr_variance(baseline)

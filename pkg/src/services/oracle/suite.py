"""
Brute-force verification suite (the `verify` command)

On a set of small random (generative, recognition) pairs it checks:
- exact gradient vs central finite differences of the exact objective
- Monte-Carlo means of both estimators vs the exact gradient
- per-coordinate variance ordering of the marginalized estimator against
  the LR estimator with zero, mean-f and optimal scalar baselines
- the common-random-numbers variance identity and positive covariance
- the law of total variance on random finite tables
"""
from dataclasses import asdict, dataclass
from pathlib import Path
from statistics import NormalDist
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from src.core.config import VerifyConfig
from src.core.seeding import Stream, derive_rng, derive_seed
from src.services.oracle.enumeration import enumerate_gradient, finite_diff_gradient, optimal_baselines, score_moments
from src.services.oracle.moments import MomentReport, crn_report, estimator_moments
from src.services.oracle.variance_partition import variance_partition_check
from src.services.sbn.network import Direction, ModelParams, Topology, UnitAddress, random_params

REPORT_FILE = "verify_report.csv"


@dataclass
class CheckRecord:
    name: str
    model: int
    value: float
    threshold: float
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def random_architecture(rng: np.random.Generator, max_units: int) -> Tuple[int, ...]:
    """Random layer sizes (deepest first) with at most max_units units; two or three layers when possible."""
    if max_units < 2:
        return (1,)
    layers = int(rng.integers(2, min(3, max_units) + 1))
    total = int(rng.integers(layers, max_units + 1))
    cuts = np.sort(rng.choice(np.arange(1, total), size=layers - 1, replace=False))
    sizes = np.diff(np.concatenate([[0], cuts, [total]]))
    return tuple(int(size) for size in sizes)


def random_model_pair(
    seed: int,
    index: int,
    max_units: int,
    data_size: int,
    weight_scale: float = 1.0,
    bias_scale: float = 0.5,
) -> Tuple[ModelParams, ModelParams, np.ndarray]:
    rng = derive_rng(seed, Stream.VERIFY, index)
    sizes = random_architecture(rng, max_units)
    gen = random_params(
        Topology(sizes, data_size, Direction.GENERATIVE),
        derive_seed(seed, Stream.INIT_GENERATIVE, index),
        weight_scale,
        bias_scale,
    )
    rec = random_params(
        Topology(sizes, data_size, Direction.RECOGNITION),
        derive_seed(seed, Stream.INIT_RECOGNITION, index),
        weight_scale,
        bias_scale,
    )
    x = rng.integers(0, 2, size=data_size).astype(np.float64)
    return gen, rec, x


def family_threshold(floor: float, alpha: float, tests: int) -> float:
    """Two-sided Bonferroni z for `tests` comparisons, never below `floor`."""
    return max(floor, NormalDist().inv_cdf(1.0 - alpha / (2.0 * max(tests, 1))))


def mean_deviation(report: MomentReport, exact: np.ndarray) -> float:
    """Largest |mean - exact| in standard errors; exact-zero-variance coordinates must match outright."""
    error = np.abs(report.mean - exact)
    tolerance = 1e-9 * (1.0 + np.abs(exact))
    zero = report.stderr == 0
    if (error[zero] > tolerance[zero]).any():
        return float("inf")
    if zero.all():
        return 0.0
    return float((error[~zero] / report.stderr[~zero]).max())


def variance_excess(marginalized: MomentReport, lr: MomentReport) -> float:
    """Largest (Var_m - Var_lr) in combined standard errors of the two variances."""
    excess = marginalized.variance - lr.variance
    combined = np.sqrt(marginalized.variance_stderr ** 2 + lr.variance_stderr ** 2)
    exact = combined == 0
    if (excess[exact] > 1e-12 * (1.0 + lr.variance[exact])).any():
        return float("inf")
    if exact.all():
        return 0.0
    return float((excess[~exact] / combined[~exact]).max())


def _lemma_checks(config: VerifyConfig) -> List[CheckRecord]:
    rng = derive_rng(config.seed, Stream.VERIFY, config.models)
    passed = 0
    for _ in range(config.lemma_tables):
        p = rng.random((4, 4))
        p /= p.sum()
        h = rng.normal(size=(4, 4))
        passed += variance_partition_check(p, h, tolerance=config.lemma_tolerance)
    return [CheckRecord("variance_partition", -1, float(passed), float(config.lemma_tables), passed == config.lemma_tables)]


def _model_checks(config: VerifyConfig, index: int, mean_z: float, variance_z: float) -> List[CheckRecord]:
    gen, rec, x = random_model_pair(
        config.seed, index, config.max_units, config.data_size, config.weight_scale, config.bias_scale
    )
    logger.info(f"Model {index}: SBN({rec.topology.architecture}) on {config.data_size} pixels")
    records: List[CheckRecord] = []

    exact = enumerate_gradient(gen, rec, x, threads=config.threads).flat()
    finite = finite_diff_gradient(gen, rec, x, h=config.finite_diff_step, threads=config.threads).flat()
    scale = max(float(np.abs(exact).max()), 1e-300)
    relative = float(np.abs(finite - exact).max()) / scale
    records.append(CheckRecord("finite_difference", index, relative, config.finite_diff_tolerance, relative <= config.finite_diff_tolerance))

    moments = score_moments(gen, rec, x, threads=config.threads)
    optimal, _ = optimal_baselines(gen, rec, x, moments=moments)
    baselines = {"zero": 0.0, "mean_f": moments.mean_f, "optimal": optimal}

    seed = derive_seed(config.seed, Stream.NOISE, index)
    common = dict(trials=config.trials, chunk=config.chunk, threads=config.threads)
    marginalized = estimator_moments("marginalized", gen, rec, None, x, seed=seed, **common)
    deviation = mean_deviation(marginalized, exact)
    records.append(CheckRecord("unbiased_marginalized", index, deviation, mean_z, deviation <= mean_z))

    for offset, (name, baseline) in enumerate(baselines.items(), start=1):
        lr = estimator_moments("lr", gen, rec, baseline, x, seed=seed + offset, **common)
        deviation = mean_deviation(lr, exact)
        records.append(CheckRecord(f"unbiased_lr_{name}", index, deviation, mean_z, deviation <= mean_z))
        excess = variance_excess(marginalized, lr)
        records.append(CheckRecord(f"variance_order_{name}", index, excess, variance_z, excess <= variance_z))

    if rec.topology.num_layers > 1:
        crn = crn_report(gen, rec, x, UnitAddress(0, 0), config.trials, seed, chunk=config.chunk)
        records.append(CheckRecord("crn_identity", index, crn.identity_residual, config.crn_tolerance, crn.identity_residual <= config.crn_tolerance))
        records.append(CheckRecord("crn_covariance", index, crn.covariance, 0.0, crn.covariance > 0.0))
    return records


def run_verification(config: VerifyConfig, out_dir: Optional[Path] = None) -> List[CheckRecord]:
    # coordinate count is bounded by the largest possible recognition net
    coordinates = config.max_units * (config.data_size + config.max_units + 1)
    mean_tests = config.models * coordinates * 4
    mean_z = family_threshold(config.mean_z, config.family_alpha, mean_tests)
    # the variance ordering is gated at the configured z for every coordinate
    variance_z = config.variance_z
    logger.info(f"Verifying {config.models} models (mean z <= {mean_z:.2f}, variance z <= {variance_z:.2f})")

    records: List[CheckRecord] = []
    for index in range(config.models):
        records.extend(_model_checks(config, index, mean_z, variance_z))
    records.extend(_lemma_checks(config))

    failed = [record for record in records if not record.passed]
    for record in failed:
        logger.warning(f"Check failed: {record.name} (model {record.model}): {record.value:.3g} vs {record.threshold:.3g}")
    logger.info(f"{len(records) - len(failed)}/{len(records)} checks passed")

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        pd.DataFrame([record.to_dict() for record in records]).to_csv(out_dir / REPORT_FILE, index=False)
    return records

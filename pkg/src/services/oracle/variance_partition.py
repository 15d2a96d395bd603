"""
Law of total variance on finite joint tables

V_{X,Y} h = E_X V_{Y|X} h + V_X E_{Y|X} h, checked exactly on an explicit
table p[x, y] of probabilities and h[x, y] of values.
"""
from dataclasses import dataclass

import numpy as np

from src.core.errors import VerificationError

PROBABILITY_TOLERANCE = 1e-12


@dataclass
class VariancePartition:
    total: float
    expected_conditional_variance: float
    variance_of_conditional_mean: float

    @property
    def residual(self) -> float:
        return abs(self.total - (self.expected_conditional_variance + self.variance_of_conditional_mean))


def _validate(p: np.ndarray, h: np.ndarray) -> None:
    if p.ndim != 2 or p.shape != h.shape:
        raise VerificationError(f"Joint table needs matching 2-D p and h, got {p.shape} and {h.shape}")
    if not (np.isfinite(p).all() and np.isfinite(h).all()):
        raise VerificationError("Joint table contains non-finite entries")
    if (p < 0).any():
        raise VerificationError("Joint table has negative probabilities")
    if abs(p.sum() - 1.0) > PROBABILITY_TOLERANCE * p.size:
        raise VerificationError(f"Joint probabilities sum to {p.sum()!r}, not 1")


def variance_partition(p: np.ndarray, h: np.ndarray) -> VariancePartition:
    p = np.asarray(p, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    _validate(p, h)

    mean = float((p * h).sum())
    total = float((p * (h - mean) ** 2).sum())

    p_x = p.sum(axis=1)
    present = p_x > 0
    safe = np.where(present, p_x, 1.0)
    conditional = p / safe[:, None]
    conditional_mean = (conditional * h).sum(axis=1)
    conditional_variance = (conditional * (h - conditional_mean[:, None]) ** 2).sum(axis=1)

    expected_variance = float((p_x * np.where(present, conditional_variance, 0.0)).sum())
    variance_of_mean = float((p_x * np.where(present, (conditional_mean - mean) ** 2, 0.0)).sum())
    return VariancePartition(total, expected_variance, variance_of_mean)


def variance_partition_check(p: np.ndarray, h: np.ndarray, tolerance: float = 1e-12) -> bool:
    """True iff the decomposition holds to `tolerance` (relative to max(1, |V h|))."""
    parts = variance_partition(p, h)
    return parts.residual <= tolerance * max(1.0, abs(parts.total))

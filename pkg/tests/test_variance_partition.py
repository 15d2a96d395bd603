"""
Tests for the law of total variance on joint tables
"""
import numpy as np
import pytest

from src.core.errors import VerificationError
from src.services.oracle.variance_partition import variance_partition, variance_partition_check


class TestVariancePartition:
    """Test E V + V E = V on explicit tables"""

    def test_hand_computed(self):
        """Test a hand-computed two-row table"""
        # X uniform on {0, 1}; h = y given x=0, h = 2 given x=1
        p = np.array([[0.25, 0.25], [0.25, 0.25]])
        h = np.array([[0.0, 1.0], [2.0, 2.0]])
        parts = variance_partition(p, h)
        assert parts.expected_conditional_variance == pytest.approx(0.125)
        assert parts.variance_of_conditional_mean == pytest.approx(0.5625)
        assert parts.total == pytest.approx(0.6875)
        assert parts.residual < 1e-15

    def test_random_tables(self, rng):
        """Test random tables against the total variance"""
        for _ in range(20):
            p = rng.random((4, 6))
            p /= p.sum()
            h = rng.normal(scale=10.0, size=(4, 6))
            assert variance_partition_check(p, h)

    def test_empty_row(self, rng):
        """Test a row with zero probability"""
        p = np.array([[0.0, 0.0], [0.3, 0.7]])
        h = rng.normal(size=(2, 2))
        parts = variance_partition(p, h)
        assert parts.variance_of_conditional_mean == pytest.approx(0.0, abs=1e-15)
        assert variance_partition_check(p, h)

    def test_not_normalized(self):
        """Test a table that does not sum to one"""
        with pytest.raises(VerificationError):
            variance_partition(np.full((2, 2), 0.3), np.zeros((2, 2)))

    def test_negative_probability(self):
        """Test a negative probability"""
        with pytest.raises(VerificationError):
            variance_partition(np.array([[1.5, -0.5]]), np.zeros((1, 2)))

    def test_shape_mismatch(self):
        """Test values and probabilities of different shapes"""
        with pytest.raises(VerificationError):
            variance_partition(np.full((2, 2), 0.25), np.zeros((2, 3)))

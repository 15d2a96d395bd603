"""
Exception hierarchy for margrad

Library code raises these; the CLI maps ConfigError to exit code 2 and
every other MargradError to exit code 1.
"""
from typing import Optional


class MargradError(Exception):
    """Base class for all library errors"""
    pass


class ConfigError(MargradError):
    """Raised for unreadable, malformed or unknown configuration"""
    pass


class ShapeMismatchError(MargradError):
    """Raised when arrays do not match the network topology"""
    pass


class InvalidParameterError(MargradError):
    """Raised for out-of-range arguments (scale, step size, unit address, ...)"""
    pass


class EnumerationCapError(MargradError):
    """Raised when exact enumeration would exceed the latent unit cap"""

    def __init__(self, units: int, cap: int):
        self.units = units
        self.cap = cap
        super().__init__(f"Exact enumeration needs M <= {cap} latent units, got M = {units}")


class DegenerateCoordinateError(MargradError):
    """Raised when a coordinate has an identically zero score"""
    pass


class UnknownEstimatorError(MargradError):
    """Raised for an estimator id that is not registered"""
    pass


class IdxFormatError(MargradError):
    """Raised for malformed IDX files"""

    def __init__(
        self,
        message: str,
        observed_magic: Optional[int] = None,
        expected_bytes: Optional[int] = None,
        actual_bytes: Optional[int] = None,
    ):
        self.observed_magic = observed_magic
        self.expected_bytes = expected_bytes
        self.actual_bytes = actual_bytes
        super().__init__(message)


class CheckpointFormatError(MargradError):
    """Raised when a checkpoint container cannot be decoded"""
    pass


class EmptyDatasetError(MargradError):
    """Raised when an operation needs at least one image"""
    pass


class NonFiniteGradientError(MargradError):
    """Raised when a gradient contains NaN or Inf; training aborts"""

    def __init__(self, parameter: str, index: tuple, value: float, step: Optional[int] = None):
        self.parameter = parameter
        self.index = index
        self.value = value
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"Non-finite gradient {value!r} in {parameter}{list(index)}{where}")


class VerificationError(MargradError):
    """Raised for malformed inputs to the verification harness"""
    pass

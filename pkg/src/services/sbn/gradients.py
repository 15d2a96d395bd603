"""
Gradient containers mirroring ModelParams

GradientAccumulator holds one array per named parameter. LogitSignals is the
intermediate form every estimator produces: for a logistic-Bernoulli layer,
the gradient of any per-layer quantity w.r.t. (weight, bias) factorizes into
a signal per output unit times the parent activation, so the contraction
into parameter shapes is written once, here.
"""
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, Iterator, Optional, Tuple

import numpy as np

from src.core.errors import NonFiniteGradientError, ShapeMismatchError

if TYPE_CHECKING:
    from src.services.sbn.network import ModelParams


@dataclass
class GradientAccumulator:
    """Per-parameter gradient estimate; keys match ModelParams.named_arrays()."""
    arrays: Dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: "ModelParams") -> "GradientAccumulator":
        return cls({key: np.zeros_like(value) for key, value in params.named_arrays().items()})

    @classmethod
    def from_flat(cls, params: "ModelParams", vector: np.ndarray) -> "GradientAccumulator":
        arrays: Dict[str, np.ndarray] = {}
        offset = 0
        for key, value in params.named_arrays().items():
            arrays[key] = np.asarray(vector[offset:offset + value.size], dtype=value.dtype).reshape(value.shape)
            offset += value.size
        if offset != vector.shape[-1]:
            raise ShapeMismatchError(f"Flat gradient has {vector.shape[-1]} entries, parameters have {offset}")
        return cls(arrays)

    def __getitem__(self, key: str) -> np.ndarray:
        return self.arrays[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self.arrays)

    def items(self):
        return self.arrays.items()

    def flat(self) -> np.ndarray:
        return np.concatenate([value.ravel() for value in self.arrays.values()])

    def _check_keys(self, other: "GradientAccumulator") -> None:
        if self.arrays.keys() != other.arrays.keys():
            raise ShapeMismatchError("Gradient accumulators have different parameter sets")

    def __add__(self, other: "GradientAccumulator") -> "GradientAccumulator":
        self._check_keys(other)
        return GradientAccumulator({key: value + other.arrays[key] for key, value in self.arrays.items()})

    def __sub__(self, other: "GradientAccumulator") -> "GradientAccumulator":
        self._check_keys(other)
        return GradientAccumulator({key: value - other.arrays[key] for key, value in self.arrays.items()})

    def __neg__(self) -> "GradientAccumulator":
        return GradientAccumulator({key: -value for key, value in self.arrays.items()})

    def scaled(self, factor: float) -> "GradientAccumulator":
        return GradientAccumulator({key: value * factor for key, value in self.arrays.items()})

    def check_finite(self, step: Optional[int] = None) -> None:
        """Raise NonFiniteGradientError naming the first offending coordinate."""
        for key, value in self.arrays.items():
            bad = ~np.isfinite(value)
            if bad.any():
                index = tuple(int(i) for i in np.argwhere(bad)[0])
                raise NonFiniteGradientError(key, index, float(value[index]), step=step)

    def to_dict(self) -> Dict[str, list]:
        return {key: value.tolist() for key, value in self.arrays.items()}


@dataclass
class LogitSignals:
    """
    Gradient signals in logit space, one entry per parameterized layer.

    signals[key] has shape [B, fan_out]; parents[key] has shape [B, fan_in]
    (None for the directly parameterized top logits). The gradient of a
    single element is signal ⊗ parent for the weight and signal for the bias.
    """
    signals: Dict[str, np.ndarray]
    parents: Dict[str, Optional[np.ndarray]] = field(default_factory=dict)

    @property
    def batch_size(self) -> int:
        return next(iter(self.signals.values())).shape[0]

    def _blocks(self, params: "ModelParams") -> Iterator[Tuple[str, str, Optional[np.ndarray], Optional[np.ndarray]]]:
        for key in params.named_arrays():
            if key == "top_logits":
                yield key, "top_logits", self.signals.get("top_logits"), None
                continue
            layer_key, kind = key.rsplit(".", 1)
            yield key, kind, self.signals.get(layer_key), self.parents.get(layer_key)

    def to_gradient(self, params: "ModelParams") -> GradientAccumulator:
        """Batch-mean gradient."""
        arrays: Dict[str, np.ndarray] = {}
        for key, kind, signal, parent in self._blocks(params):
            reference = params.named_arrays()[key]
            if signal is None:
                arrays[key] = np.zeros_like(reference)
                continue
            batch = signal.shape[0]
            if kind == "weight":
                arrays[key] = (signal.T @ parent) / batch
            else:
                arrays[key] = signal.sum(axis=0) / batch
        return GradientAccumulator(arrays)

    def per_sample(self, params: "ModelParams") -> np.ndarray:
        """Flat per-element gradients, shape [B, P], in named_arrays order."""
        columns = []
        batch = self.batch_size
        for key, kind, signal, parent in self._blocks(params):
            reference = params.named_arrays()[key]
            if signal is None:
                columns.append(np.zeros((batch, reference.size), dtype=reference.dtype))
            elif kind == "weight":
                columns.append(np.einsum("bh,bi->bhi", signal, parent).reshape(batch, -1))
            else:
                columns.append(signal)
        return np.concatenate(columns, axis=1)

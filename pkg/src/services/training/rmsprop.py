"""
RMSprop for SBN parameters

    acc   <- rho * acc + (1 - rho) * g^2
    param <- param - lr * g / sqrt(acc + delta)

g is the gradient of the loss (the negative bound). Weight decay adds
wd * W to the gradients of weight matrices only; biases and top logits
are never decayed.
"""
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from src.core.errors import InvalidParameterError, ShapeMismatchError
from src.services.sbn.gradients import GradientAccumulator
from src.services.sbn.network import ModelParams


def decay_mask(params: ModelParams) -> Dict[str, bool]:
    """Which named arrays receive weight decay."""
    return {key: key.endswith(".weight") for key in params.named_arrays()}


@dataclass
class RmsPropState:
    learning_rate: float = 1e-3
    decay: float = 0.9
    eps: float = 1e-8
    weight_decay: float = 0.0
    accumulators: Dict[str, np.ndarray] = field(default_factory=dict)
    steps: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidParameterError(f"Learning rate must be > 0, got {self.learning_rate}")
        if not 0.0 < self.decay < 1.0:
            raise InvalidParameterError(f"RMSprop decay must lie in (0, 1), got {self.decay}")
        if self.eps <= 0 or self.weight_decay < 0:
            raise InvalidParameterError("RMSprop needs eps > 0 and weight_decay >= 0")

    @classmethod
    def for_params(cls, params: ModelParams, **kwargs) -> "RmsPropState":
        state = cls(**kwargs)
        state.accumulators = {key: np.zeros_like(value) for key, value in params.named_arrays().items()}
        return state


def rmsprop_step(
    params: ModelParams,
    grads: GradientAccumulator,
    state: RmsPropState,
) -> Tuple[ModelParams, RmsPropState]:
    """One descent step on the loss gradient `grads`; returns new params, updates state in place."""
    arrays = params.named_arrays()
    if grads.arrays.keys() != arrays.keys():
        raise ShapeMismatchError("Gradient keys do not match the parameters")
    if not state.accumulators:
        state.accumulators = {key: np.zeros_like(value) for key, value in arrays.items()}

    mask = decay_mask(params)
    updated: Dict[str, np.ndarray] = {}
    for key, value in arrays.items():
        grad = grads[key]
        if grad.shape != value.shape or state.accumulators[key].shape != value.shape:
            raise ShapeMismatchError(f"{key}: gradient {grad.shape} vs parameter {value.shape}")
        if mask[key] and state.weight_decay > 0:
            grad = grad + state.weight_decay * value
        acc = state.accumulators[key]
        acc *= state.decay
        acc += (1.0 - state.decay) * grad * grad
        updated[key] = value - state.learning_rate * grad / np.sqrt(acc + state.eps)

    state.steps += 1
    return ModelParams.from_named_arrays(params.topology, updated), state

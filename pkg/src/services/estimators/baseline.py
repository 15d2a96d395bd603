"""
Input-dependent baseline for the likelihood-ratio estimator

b_l(parent_l) = running_mean + C_l(parent_l), where C_l is a small tanh
network per recognition layer and parent_l is that layer's conditioning
input (x for the first latent layer, the previous latent sample otherwise).
It never sees layer l itself or anything sampled after it.
"""
import pickle
from pathlib import Path
from typing import TYPE_CHECKING, List, Sequence, Union

import numpy as np
import torch
import torch.nn as nn
from loguru import logger

from src.core.errors import CheckpointFormatError, InvalidParameterError, ShapeMismatchError
from src.services.sbn.network import ModelParams

if TYPE_CHECKING:
    from src.services.estimators.likelihood_ratio import LearningSignals


class LayerRegressor(nn.Module):
    """Conditioning vector -> scalar, one hidden tanh layer."""

    def __init__(self, input_dim: int, hidden_dim: int = 100):
        super(LayerRegressor, self).__init__()
        self.hidden = nn.Linear(input_dim, hidden_dim)
        self.output = nn.Linear(hidden_dim, 1)

    def forward(self, inputs: torch.Tensor) -> torch.Tensor:
        return self.output(torch.tanh(self.hidden(inputs))).squeeze(-1)


class BaselineModel(nn.Module):
    """
    Running mean of f plus one regressor per recognition layer.

    Regressors are trained with RMSprop on the squared residual
    (f - running_mean - C_l)^2; the learning rate is passed per update.
    """

    def __init__(
        self,
        input_dims: Sequence[int],
        hidden_dim: int = 100,
        decay: float = 0.9,
        seed: int = 0,
        rmsprop_decay: float = 0.9,
        rmsprop_eps: float = 1e-8,
    ):
        super(BaselineModel, self).__init__()
        if not 0.0 <= decay < 1.0:
            raise InvalidParameterError(f"Running-mean decay must lie in [0, 1), got {decay}")
        self.input_dims = [int(dim) for dim in input_dims]
        self.hidden_dim = hidden_dim
        self.decay = decay
        self.seed = seed
        self.rmsprop_decay = rmsprop_decay
        self.rmsprop_eps = rmsprop_eps

        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.regressors = nn.ModuleList([LayerRegressor(dim, hidden_dim) for dim in self.input_dims])
        self.double()
        self.register_buffer("running_mean", torch.zeros((), dtype=torch.float64))
        self.register_buffer("updates", torch.zeros((), dtype=torch.int64))
        self.optimizer = torch.optim.RMSprop(self.regressors.parameters(), lr=0.0, alpha=rmsprop_decay, eps=rmsprop_eps)

    @classmethod
    def for_recognition(cls, rec: ModelParams, hidden_dim: int = 100, decay: float = 0.9, seed: int = 0, **kwargs) -> "BaselineModel":
        return cls([layer.fan_in for layer in rec.layers], hidden_dim=hidden_dim, decay=decay, seed=seed, **kwargs)

    @property
    def num_layers(self) -> int:
        return len(self.regressors)

    def check_compatible(self, rec: ModelParams) -> None:
        dims = [layer.fan_in for layer in rec.layers]
        if dims != self.input_dims:
            raise ShapeMismatchError(f"Baseline expects layer inputs {self.input_dims}, recognition net has {dims}")

    def _regress(self, parents: Sequence[np.ndarray]) -> List[torch.Tensor]:
        if len(parents) != self.num_layers:
            raise ShapeMismatchError(f"Baseline has {self.num_layers} regressors, got {len(parents)} inputs")
        return [
            regressor(torch.as_tensor(np.ascontiguousarray(parent), dtype=torch.float64))
            for regressor, parent in zip(self.regressors, parents)
        ]

    def input_baselines(self, parents: Sequence[np.ndarray]) -> List[np.ndarray]:
        """C_l(parent_l) per layer, shape [B]."""
        with torch.no_grad():
            return [value.numpy().copy() for value in self._regress(parents)]

    def baseline_values(self, parents: Sequence[np.ndarray]) -> List[np.ndarray]:
        """Full per-layer baseline b_l = running_mean + C_l(parent_l)."""
        mean = float(self.running_mean)
        return [mean + value for value in self.input_baselines(parents)]

    def update(self, signals: "LearningSignals", step_size: float) -> None:
        if step_size < 0:
            raise InvalidParameterError(f"Baseline step size must be >= 0, got {step_size}")
        if step_size == 0:
            return

        f = torch.as_tensor(signals.f, dtype=torch.float64)
        mean = self.running_mean.clone()
        for group in self.optimizer.param_groups:
            group["lr"] = step_size
        self.optimizer.zero_grad()
        loss = sum(((f - mean - value) ** 2).mean() for value in self._regress(signals.parents))
        loss.backward()
        self.optimizer.step()

        with torch.no_grad():
            self.running_mean.mul_(self.decay).add_((1.0 - self.decay) * f.mean())
            self.updates.add_(1)
        logger.debug(f"Baseline update {int(self.updates)}: residual loss {float(loss):.4f}, running mean {float(self.running_mean):.4f}")

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "config": {
                    "input_dims": self.input_dims,
                    "hidden_dim": self.hidden_dim,
                    "decay": self.decay,
                    "seed": self.seed,
                    "rmsprop_decay": self.rmsprop_decay,
                    "rmsprop_eps": self.rmsprop_eps,
                },
                "model": self.state_dict(),
                "optimizer": self.optimizer.state_dict(),
            },
            path,
        )
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "BaselineModel":
        try:
            payload = torch.load(Path(path), map_location="cpu", weights_only=True)
            config = payload["config"]
            baseline = cls(**config)
            baseline.load_state_dict(payload["model"])
            baseline.optimizer.load_state_dict(payload["optimizer"])
        except (KeyError, TypeError, RuntimeError, OSError, EOFError, ValueError, pickle.UnpicklingError) as e:
            raise CheckpointFormatError(f"Cannot load baseline from {path}: {e}") from e
        return baseline


def update_baseline(baseline: BaselineModel, learning_signals: "LearningSignals", step_size: float) -> None:
    baseline.update(learning_signals, step_size)

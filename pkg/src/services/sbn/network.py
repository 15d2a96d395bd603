"""
Layered Bernoulli stochastic networks (sigmoid belief networks)

Each binary unit is Bernoulli with mean logistic(W·parent + b). A sample is
reparameterized by uniform noise: z_i = 1 iff eps_i < mu_i. All sampling is
a pure function of (params, x, noise), which is what lets the estimators
share noise between the simulations they difference.

Latent layers are indexed canonically from the data side: latent 0 is H_1
(adjacent to the data), latent L-1 is H_L (deepest). The recognition net
samples latents 0..L-1 from x; the generative net samples L-1..0 from its
directly parameterized top logits and then emits x.

Every array may carry a leading batch axis. Functions accept a single
element (1-D arrays) or a batch (2-D arrays) and return the same form.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.errors import InvalidParameterError, ShapeMismatchError
from src.services.sbn.gradients import GradientAccumulator, LogitSignals

# Probabilities are clamped to [PROB_EPS, 1 - PROB_EPS] before taking logs.
PROB_EPS = 1e-7


class Direction(str, Enum):
    GENERATIVE = "generative"
    RECOGNITION = "recognition"


@dataclass(frozen=True)
class Topology:
    """
    Layer structure of an SBN.

    latent_sizes follows the SBN(H_L-...-H_1) notation: deepest layer first.
    """
    latent_sizes: Tuple[int, ...]
    data_size: int
    direction: Direction

    def __post_init__(self):
        object.__setattr__(self, "latent_sizes", tuple(int(size) for size in self.latent_sizes))
        object.__setattr__(self, "direction", Direction(self.direction))
        if not self.latent_sizes:
            raise InvalidParameterError("Topology needs at least one latent layer")
        if any(size < 1 for size in self.latent_sizes) or self.data_size < 1:
            raise InvalidParameterError(f"Layer sizes must be >= 1, got {self.latent_sizes} / {self.data_size}")

    @classmethod
    def from_architecture(
        cls,
        architecture: Union[str, Sequence[int]],
        data_size: int,
        direction: Direction = Direction.RECOGNITION,
    ) -> "Topology":
        if isinstance(architecture, str):
            sizes = [int(part) for part in architecture.split("-")]
        else:
            sizes = list(architecture)
        return cls(tuple(sizes), data_size, direction)

    @property
    def architecture(self) -> str:
        return "-".join(str(size) for size in self.latent_sizes)

    @property
    def num_layers(self) -> int:
        return len(self.latent_sizes)

    @property
    def total_units(self) -> int:
        """M, the number of latent units."""
        return sum(self.latent_sizes)

    @property
    def is_generative(self) -> bool:
        return self.direction is Direction.GENERATIVE

    @property
    def layer_sizes(self) -> Tuple[int, ...]:
        """Unit counts in sampling order, data layer included."""
        if self.is_generative:
            return self.latent_sizes + (self.data_size,)
        return (self.data_size,) + tuple(reversed(self.latent_sizes))

    def latent_size(self, latent: int) -> int:
        return self.latent_sizes[self.num_layers - 1 - latent]

    def latent_offsets(self) -> List[int]:
        """Start index of each canonical latent layer in a flat unit vector."""
        offsets, total = [], 0
        for latent in range(self.num_layers):
            offsets.append(total)
            total += self.latent_size(latent)
        return offsets

    def reversed(self) -> "Topology":
        other = Direction.RECOGNITION if self.is_generative else Direction.GENERATIVE
        return Topology(self.latent_sizes, self.data_size, other)

    def sampling_order(self) -> List[int]:
        latents = list(range(self.num_layers))
        return latents[::-1] if self.is_generative else latents

    def is_descendant(self, latent: int, of_latent: int) -> bool:
        """Layered chains: every later layer in sampling order is downstream."""
        if self.is_generative:
            return latent < of_latent
        return latent > of_latent

    def producing_layer(self, latent: int) -> Optional[int]:
        """Index into ModelParams.layers of the layer that emits `latent`."""
        if self.is_generative:
            return None if latent == self.num_layers - 1 else self.num_layers - 2 - latent
        return latent

    def consuming_layer(self, latent: int) -> Optional[int]:
        """Index of the layer that takes `latent` as its parent."""
        if self.is_generative:
            return self.num_layers - 1 - latent
        return latent + 1 if latent + 1 < self.num_layers else None

    @property
    def observation_layer(self) -> int:
        if not self.is_generative:
            raise InvalidParameterError("Only generative nets emit the data layer")
        return self.num_layers - 1

    def layer_shapes(self) -> List[Tuple[int, int]]:
        """(fan_out, fan_in) for each entry of ModelParams.layers."""
        sizes = self.layer_sizes
        return [(sizes[k + 1], sizes[k]) for k in range(len(sizes) - 1)]

    def to_dict(self) -> dict:
        return {
            "latent_sizes": list(self.latent_sizes),
            "data_size": self.data_size,
            "direction": self.direction.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Topology":
        return cls(tuple(data["latent_sizes"]), int(data["data_size"]), Direction(data["direction"]))


@dataclass
class LayerParams:
    weight: np.ndarray  # [fan_out, fan_in]
    bias: np.ndarray    # [fan_out]

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeMismatchError(f"Layer weight {self.weight.shape} and bias {self.bias.shape} disagree")

    @property
    def fan_in(self) -> int:
        return self.weight.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[0]


@dataclass
class ModelParams:
    """
    Parameters of one SBN.

    layers follow sampling order; top_logits (the deepest layer's prior) is
    present exactly for generative nets.
    """
    topology: Topology
    layers: List[LayerParams]
    top_logits: Optional[np.ndarray] = None

    def __post_init__(self):
        shapes = self.topology.layer_shapes()
        if len(self.layers) != len(shapes):
            raise ShapeMismatchError(f"Expected {len(shapes)} layers, got {len(self.layers)}")
        for index, (layer, shape) in enumerate(zip(self.layers, shapes)):
            if layer.weight.shape != shape:
                raise ShapeMismatchError(f"layers.{index}.weight has shape {layer.weight.shape}, expected {shape}")
        if self.topology.is_generative:
            expected = (self.topology.latent_sizes[0],)
            if self.top_logits is None or self.top_logits.shape != expected:
                raise ShapeMismatchError(f"Generative net needs top_logits of shape {expected}")
        elif self.top_logits is not None:
            raise ShapeMismatchError("Recognition nets have no top_logits")

    @property
    def dtype(self) -> np.dtype:
        return self.layers[0].weight.dtype

    def named_arrays(self) -> Dict[str, np.ndarray]:
        """Parameter arrays by name (references, not copies)."""
        arrays: Dict[str, np.ndarray] = {}
        for index, layer in enumerate(self.layers):
            arrays[f"layers.{index}.weight"] = layer.weight
            arrays[f"layers.{index}.bias"] = layer.bias
        if self.top_logits is not None:
            arrays["top_logits"] = self.top_logits
        return arrays

    @property
    def parameter_count(self) -> int:
        return sum(value.size for value in self.named_arrays().values())

    def flat(self) -> np.ndarray:
        return np.concatenate([value.ravel() for value in self.named_arrays().values()])

    def with_flat(self, vector: np.ndarray) -> "ModelParams":
        """Copy of these params with values taken from a flat vector."""
        arrays = GradientAccumulator.from_flat(self, vector).arrays
        return self.from_named_arrays(self.topology, arrays)

    @classmethod
    def from_named_arrays(cls, topology: Topology, arrays: Dict[str, np.ndarray]) -> "ModelParams":
        layers = [
            LayerParams(np.array(arrays[f"layers.{index}.weight"]), np.array(arrays[f"layers.{index}.bias"]))
            for index in range(len(topology.layer_shapes()))
        ]
        top = np.array(arrays["top_logits"]) if "top_logits" in arrays else None
        return cls(topology, layers, top)

    def copy(self) -> "ModelParams":
        return self.from_named_arrays(self.topology, self.named_arrays())

    def astype(self, dtype) -> "ModelParams":
        arrays = {key: value.astype(dtype) for key, value in self.named_arrays().items()}
        return self.from_named_arrays(self.topology, arrays)


@dataclass
class NoiseState:
    """One uniform draw in [0, 1) per latent unit, canonical layer order."""
    layers: List[np.ndarray]

    @classmethod
    def draw(
        cls,
        topology: Topology,
        rng: np.random.Generator,
        batch: Optional[int] = None,
        dtype=np.float64,
    ) -> "NoiseState":
        shape = () if batch is None else (batch,)
        return cls([
            rng.random(shape + (topology.latent_size(latent),)).astype(dtype, copy=False)
            for latent in range(topology.num_layers)
        ])

    @property
    def is_batched(self) -> bool:
        return self.layers[0].ndim == 2

    @property
    def batch_size(self) -> int:
        return self.layers[0].shape[0] if self.is_batched else 1

    def validate(self, topology: Topology) -> None:
        if len(self.layers) != topology.num_layers:
            raise ShapeMismatchError(f"Noise has {len(self.layers)} layers, topology has {topology.num_layers}")
        for latent, eps in enumerate(self.layers):
            if eps.shape[-1] != topology.latent_size(latent) or eps.ndim not in (1, 2):
                raise ShapeMismatchError(
                    f"Noise for latent {latent} has shape {eps.shape}, expected [..., {topology.latent_size(latent)}]"
                )
            if eps.ndim != self.layers[0].ndim or (eps.ndim == 2 and eps.shape[0] != self.layers[0].shape[0]):
                raise ShapeMismatchError("Noise layers disagree on batch shape")
        for eps in self.layers:
            if eps.size and (eps.min() < 0.0 or eps.max() >= 1.0):
                raise InvalidParameterError("Noise values must lie in [0, 1)")

    def select(self, index) -> "NoiseState":
        return NoiseState([eps[index] for eps in self.layers])


@dataclass
class SampleState:
    """Binary configuration of every latent layer plus the conditioning input."""
    layers: List[np.ndarray]
    x: Optional[np.ndarray] = None

    def copy(self) -> "SampleState":
        return SampleState([z.copy() for z in self.layers], None if self.x is None else self.x.copy())

    def flat(self) -> np.ndarray:
        """Latent bits concatenated in canonical order, shape [..., M]."""
        return np.concatenate(self.layers, axis=-1)

    def unit(self, address: "UnitAddress") -> np.ndarray:
        return self.layers[address.layer][..., address.unit]


@dataclass(frozen=True)
class UnitAddress:
    layer: int
    unit: int

    def validate(self, topology: Topology) -> None:
        if not 0 <= self.layer < topology.num_layers:
            raise InvalidParameterError(f"Latent layer {self.layer} out of range [0, {topology.num_layers})")
        size = topology.latent_size(self.layer)
        if not 0 <= self.unit < size:
            raise InvalidParameterError(f"Unit {self.unit} out of range [0, {size}) in latent layer {self.layer}")


@dataclass
class LayerTerm:
    """One Bernoulli factor of a net's log-probability."""
    key: str
    logits: np.ndarray
    target: np.ndarray
    parent: Optional[np.ndarray]

    @property
    def means(self) -> np.ndarray:
        return sigmoid(self.logits)

    def log_prob(self) -> np.ndarray:
        return bernoulli_log_prob(self.target, self.means).sum(axis=-1)


def sigmoid(logits: np.ndarray) -> np.ndarray:
    """Logistic function without overflow for large |logits|."""
    return np.exp(-np.logaddexp(0.0, -logits))


def bernoulli_log_prob(target: np.ndarray, means: np.ndarray) -> np.ndarray:
    """Elementwise log Bernoulli(target; means) with clamped probabilities."""
    means = np.clip(means, PROB_EPS, 1.0 - PROB_EPS)
    return target * np.log(means) + (1.0 - target) * np.log1p(-means)


def init_params(topology: Topology, scale: float = 0.01, seed: int = 0, dtype=np.float64) -> ModelParams:
    """Zero-mean Gaussian weights with std `scale`; zero biases and top logits."""
    if not scale > 0:
        raise InvalidParameterError(f"Initialization scale must be positive, got {scale}")
    rng = np.random.default_rng(seed)
    layers = [
        LayerParams(
            rng.normal(0.0, scale, size=shape).astype(dtype),
            np.zeros(shape[0], dtype=dtype),
        )
        for shape in topology.layer_shapes()
    ]
    top = np.zeros(topology.latent_sizes[0], dtype=dtype) if topology.is_generative else None
    return ModelParams(topology, layers, top)


def random_params(
    topology: Topology,
    seed: int,
    weight_scale: float = 1.0,
    bias_scale: float = 0.5,
    dtype=np.float64,
) -> ModelParams:
    """Random weights, biases and top logits (test models, synthetic generators)."""
    rng = np.random.default_rng(seed)
    layers = [
        LayerParams(
            rng.normal(0.0, weight_scale, size=shape).astype(dtype),
            rng.normal(0.0, bias_scale, size=shape[0]).astype(dtype),
        )
        for shape in topology.layer_shapes()
    ]
    top = None
    if topology.is_generative:
        top = rng.normal(0.0, bias_scale, size=topology.latent_sizes[0]).astype(dtype)
    return ModelParams(topology, layers, top)


def layer_means(layer: LayerParams, parent: np.ndarray) -> np.ndarray:
    """mu = logistic(W·parent + b); parent may carry a batch axis."""
    if parent.shape[-1] != layer.fan_in:
        raise ShapeMismatchError(f"Parent has {parent.shape[-1]} units, layer expects {layer.fan_in}")
    return sigmoid(parent @ layer.weight.T + layer.bias)


def _batched(array: Optional[np.ndarray], batch: int) -> Optional[np.ndarray]:
    if array is None:
        return None
    if array.ndim == 1:
        return np.broadcast_to(array, (batch, array.shape[0]))
    if array.shape[0] != batch:
        raise ShapeMismatchError(f"Batch of {array.shape[0]} does not match noise batch of {batch}")
    return array


def _check_input(model: ModelParams, x: Optional[np.ndarray]) -> None:
    if model.topology.is_generative:
        if x is not None and x.shape[-1] != model.topology.data_size:
            raise ShapeMismatchError(f"x has {x.shape[-1]} pixels, topology expects {model.topology.data_size}")
        return
    if x is None:
        raise ShapeMismatchError("Recognition nets need an input x")
    if x.shape[-1] != model.topology.data_size:
        raise ShapeMismatchError(f"x has {x.shape[-1]} pixels, topology expects {model.topology.data_size}")


def conditional_logits(
    model: ModelParams,
    latent: int,
    x: Optional[np.ndarray],
    layers: Sequence[Optional[np.ndarray]],
    batch: int,
) -> np.ndarray:
    """Logits of `latent` given its parent in the model's direction (batched arrays)."""
    topology = model.topology
    index = topology.producing_layer(latent)
    if index is None:
        return np.broadcast_to(model.top_logits, (batch, model.top_logits.shape[0]))
    if topology.is_generative:
        parent = layers[latent + 1]
    else:
        parent = x if latent == 0 else layers[latent - 1]
    layer = model.layers[index]
    return parent @ layer.weight.T + layer.bias


def _forward(
    model: ModelParams,
    x: Optional[np.ndarray],
    noise: NoiseState,
    clamp: Optional[Tuple[UnitAddress, int]] = None,
) -> SampleState:
    topology = model.topology
    _check_input(model, x)
    noise.validate(topology)
    single = not noise.is_batched
    batch = noise.batch_size
    eps = [e[None, :] if single else e for e in noise.layers]
    xb = None if x is None else _batched(x if x.ndim > 1 or not single else x[None, :], batch)

    layers: List[Optional[np.ndarray]] = [None] * topology.num_layers
    for latent in topology.sampling_order():
        means = sigmoid(conditional_logits(model, latent, xb, layers, batch))
        layers[latent] = (eps[latent] < means).astype(means.dtype)
    if clamp is not None:
        unit, value = clamp
        clamped = layers[unit.layer].copy()
        clamped[:, unit.unit] = value
        layers[unit.layer] = clamped
        for latent in topology.sampling_order():
            if topology.is_descendant(latent, unit.layer):
                means = sigmoid(conditional_logits(model, latent, xb, layers, batch))
                layers[latent] = (eps[latent] < means).astype(means.dtype)

    if single:
        return SampleState([z[0] for z in layers], x)
    return SampleState(list(layers), x)


def reparam_forward(model: ModelParams, x: Optional[np.ndarray], noise: NoiseState) -> SampleState:
    """Ancestral sampling with z_i = 1 exactly when eps_i < mu_i."""
    return _forward(model, x, noise)


def clamped_forward(
    model: ModelParams,
    x: Optional[np.ndarray],
    noise: NoiseState,
    unit: UnitAddress,
    value: int,
) -> SampleState:
    """
    Sample with z at `unit` fixed to `value`.

    Non-descendants keep their unclamped values; descendants are
    re-thresholded against their recomputed means with the same noise.
    """
    unit.validate(model.topology)
    if value not in (0, 1):
        raise InvalidParameterError(f"Clamp value must be 0 or 1, got {value}")
    return _forward(model, x, noise, clamp=(unit, value))


def layer_terms(model: ModelParams, x: Optional[np.ndarray], z: SampleState) -> List[LayerTerm]:
    """
    Bernoulli factors of the net, batched.

    For generative nets the observation factor is included iff x is given.
    """
    topology = model.topology
    _check_input(model, x)
    if len(z.layers) != topology.num_layers:
        raise ShapeMismatchError(f"Sample has {len(z.layers)} layers, topology has {topology.num_layers}")
    for latent, bits in enumerate(z.layers):
        if bits.shape[-1] != topology.latent_size(latent):
            raise ShapeMismatchError(f"Latent {latent} has {bits.shape[-1]} units, expected {topology.latent_size(latent)}")

    single = z.layers[0].ndim == 1
    layers = [bits[None, :] if single else bits for bits in z.layers]
    batch = layers[0].shape[0]
    xb = None
    if x is not None:
        xb = _batched(x[None, :] if (single and x.ndim == 1) else x, batch)

    terms: List[LayerTerm] = []
    for latent in topology.sampling_order():
        index = topology.producing_layer(latent)
        key = "top_logits" if index is None else f"layers.{index}"
        if index is None:
            parent = None
        elif topology.is_generative:
            parent = layers[latent + 1]
        else:
            parent = xb if latent == 0 else layers[latent - 1]
        logits = conditional_logits(model, latent, xb, layers, batch)
        terms.append(LayerTerm(key, logits, layers[latent], parent))
    if topology.is_generative and xb is not None:
        layer = model.layers[topology.observation_layer]
        parent = layers[0]
        terms.append(LayerTerm(f"layers.{topology.observation_layer}", parent @ layer.weight.T + layer.bias, xb, parent))
    return terms


def score_signals(model: ModelParams, x: Optional[np.ndarray], z: SampleState) -> LogitSignals:
    """Logit-space score (z - mu) of every factor."""
    terms = layer_terms(model, x, z)
    return LogitSignals(
        signals={term.key: term.target - term.means for term in terms},
        parents={term.key: term.parent for term in terms},
    )


def log_prob_and_score(
    model: ModelParams,
    x: Optional[np.ndarray],
    z: SampleState,
) -> Tuple[Union[float, np.ndarray], GradientAccumulator]:
    """
    log q(z|x) = sum_i [z_i log mu_i + (1 - z_i) log(1 - mu_i)] and its
    gradient w.r.t. the net's parameters (batch mean for batched input).
    """
    terms = layer_terms(model, x, z)
    log_prob = sum(term.log_prob() for term in terms)
    score = LogitSignals(
        signals={term.key: term.target - term.means for term in terms},
        parents={term.key: term.parent for term in terms},
    ).to_gradient(model)
    if z.layers[0].ndim == 1:
        return float(log_prob[0]), score
    return log_prob, score


def sample_observations(gen: ModelParams, z: SampleState, rng: np.random.Generator) -> np.ndarray:
    """Draw the data layer of a generative net given its latent sample."""
    topology = gen.topology
    if not topology.is_generative:
        raise InvalidParameterError("Only generative nets emit observations")
    layer = gen.layers[topology.observation_layer]
    means = layer_means(layer, z.layers[0])
    return (rng.random(means.shape) < means).astype(means.dtype)

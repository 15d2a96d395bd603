"""
Variational objective f(x, z) = log p(x, z) - log q(z|x)

The generative net p factorizes as p(z_L) p(z_{L-1}|z_L) ... p(x|z_1) with
directly parameterized top logits; the recognition net q runs the other way.
ForwardPass keeps every factor's logits and elementwise log-probabilities so
estimators that perturb one unit can update f without a full recompute.
"""
from dataclasses import dataclass
from typing import Callable, List, Union

import numpy as np

from src.core.errors import ShapeMismatchError
from src.services.sbn.gradients import GradientAccumulator
from src.services.sbn.network import (
    ModelParams,
    NoiseState,
    SampleState,
    bernoulli_log_prob,
    layer_terms,
    score_signals,
    sigmoid,
)


@dataclass
class ObjectiveValue:
    """f with its two components, in nats; arrays for batched input."""
    f: Union[float, np.ndarray]
    log_p: Union[float, np.ndarray]
    log_q: Union[float, np.ndarray]

    def to_dict(self) -> dict:
        return {"f": np.asarray(self.f).tolist(), "log_p": np.asarray(self.log_p).tolist(), "log_q": np.asarray(self.log_q).tolist()}


def check_pair(gen: ModelParams, rec: ModelParams) -> None:
    if not gen.topology.is_generative or rec.topology.is_generative:
        raise ShapeMismatchError("Expected a (generative, recognition) pair")
    if gen.topology.latent_sizes != rec.topology.latent_sizes or gen.topology.data_size != rec.topology.data_size:
        raise ShapeMismatchError(
            f"Generative {gen.topology.architecture}/{gen.topology.data_size} and recognition "
            f"{rec.topology.architecture}/{rec.topology.data_size} nets disagree"
        )


def _reduce(values: np.ndarray, single: bool):
    return float(values[0]) if single else values


def log_p_joint(gen: ModelParams, x: np.ndarray, z: SampleState):
    """log p(x, z) summed down the generative chain, observation layer included."""
    if x is None:
        raise ShapeMismatchError("log p(x, z) needs the observation x")
    terms = layer_terms(gen, x, z)
    return _reduce(sum(term.log_prob() for term in terms), z.layers[0].ndim == 1)


def log_q(rec: ModelParams, x: np.ndarray, z: SampleState):
    terms = layer_terms(rec, x, z)
    return _reduce(sum(term.log_prob() for term in terms), z.layers[0].ndim == 1)


def elbo_f(gen: ModelParams, rec: ModelParams, x: np.ndarray, z: SampleState) -> ObjectiveValue:
    check_pair(gen, rec)
    log_p = log_p_joint(gen, x, z)
    log_qz = log_q(rec, x, z)
    return ObjectiveValue(f=log_p - log_qz, log_p=log_p, log_q=log_qz)


def grad_generative(gen: ModelParams, x: np.ndarray, z: SampleState) -> GradientAccumulator:
    """Analytic gradient of log p(x, z) w.r.t. the generative parameters (batch mean)."""
    if x is None:
        raise ShapeMismatchError("The generative gradient needs the observation x")
    return score_signals(gen, x, z).to_gradient(gen)


@dataclass
class ForwardPass:
    """
    One reparameterized sample with every factor of f kept elementwise.

    All arrays are batched [B, ...]. Generative factors are indexed by their
    target latent; the observation factor is kept separately.
    """
    x: np.ndarray
    latents: List[np.ndarray]
    noise: List[np.ndarray]
    rec_logits: List[np.ndarray]
    rec_log_probs: List[np.ndarray]
    gen_logits: List[np.ndarray]
    gen_log_probs: List[np.ndarray]
    obs_logits: np.ndarray
    obs_log_probs: np.ndarray

    @property
    def batch_size(self) -> int:
        return self.x.shape[0]

    def rec_means(self, latent: int) -> np.ndarray:
        return sigmoid(self.rec_logits[latent])

    def rec_term_sums(self) -> List[np.ndarray]:
        return [values.sum(axis=-1) for values in self.rec_log_probs]

    def gen_term_sums(self) -> List[np.ndarray]:
        return [values.sum(axis=-1) for values in self.gen_log_probs]

    @property
    def log_q(self) -> np.ndarray:
        return sum(self.rec_term_sums())

    @property
    def log_p(self) -> np.ndarray:
        return sum(self.gen_term_sums()) + self.obs_log_probs.sum(axis=-1)

    @property
    def f(self) -> np.ndarray:
        return self.log_p - self.log_q

    def sample(self) -> SampleState:
        return SampleState(list(self.latents), self.x)


def gen_logits_for(gen: ModelParams, latent: int, latents: List[np.ndarray]) -> np.ndarray:
    """Logits of p(z_latent | z_latent+1); the top layer uses its own logits."""
    topology = gen.topology
    index = topology.producing_layer(latent)
    if index is None:
        return np.broadcast_to(gen.top_logits, latents[latent].shape)
    layer = gen.layers[index]
    return latents[latent + 1] @ layer.weight.T + layer.bias


def rec_logits_for(rec: ModelParams, latent: int, x: np.ndarray, latents: List[np.ndarray]) -> np.ndarray:
    parent = x if latent == 0 else latents[latent - 1]
    layer = rec.layers[latent]
    return parent @ layer.weight.T + layer.bias


def evaluate_sample(gen: ModelParams, rec: ModelParams, x: np.ndarray, noise: NoiseState) -> ForwardPass:
    """Sample z ~ q(z|x) from the given noise and score it under both nets."""
    check_pair(gen, rec)
    noise.validate(rec.topology)
    if x.shape[-1] != rec.topology.data_size:
        raise ShapeMismatchError(f"x has {x.shape[-1]} pixels, topology expects {rec.topology.data_size}")
    eps = [e if e.ndim == 2 else e[None, :] for e in noise.layers]
    batch = eps[0].shape[0]
    xb = np.broadcast_to(x, (batch, x.shape[-1])) if x.ndim == 1 else x
    if xb.shape[0] != batch:
        raise ShapeMismatchError(f"Batch of {xb.shape[0]} images does not match noise batch of {batch}")

    latents: List[np.ndarray] = []
    rec_logits: List[np.ndarray] = []
    rec_log_probs: List[np.ndarray] = []
    for latent in range(rec.topology.num_layers):
        logits = rec_logits_for(rec, latent, xb, latents)
        means = sigmoid(logits)
        z = (eps[latent] < means).astype(means.dtype)
        latents.append(z)
        rec_logits.append(logits)
        rec_log_probs.append(bernoulli_log_prob(z, means))

    gen_logits: List[np.ndarray] = []
    gen_log_probs: List[np.ndarray] = []
    for latent in range(gen.topology.num_layers):
        logits = gen_logits_for(gen, latent, latents)
        gen_logits.append(logits)
        gen_log_probs.append(bernoulli_log_prob(latents[latent], sigmoid(logits)))
    observation = gen.layers[gen.topology.observation_layer]
    obs_logits = latents[0] @ observation.weight.T + observation.bias
    obs_log_probs = bernoulli_log_prob(xb, sigmoid(obs_logits))

    return ForwardPass(
        x=xb,
        latents=latents,
        noise=eps,
        rec_logits=rec_logits,
        rec_log_probs=rec_log_probs,
        gen_logits=gen_logits,
        gen_log_probs=gen_log_probs,
        obs_logits=obs_logits,
        obs_log_probs=obs_log_probs,
    )


def objective_for_latents(
    gen: ModelParams,
    rec: ModelParams,
    x: np.ndarray,
    latents: List[np.ndarray],
) -> np.ndarray:
    """f for explicit latent configurations; arrays may carry extra leading axes."""
    log_qz = 0.0
    for latent in range(rec.topology.num_layers):
        means = sigmoid(rec_logits_for(rec, latent, x, latents))
        log_qz = log_qz + bernoulli_log_prob(latents[latent], means).sum(axis=-1)
    log_pz = 0.0
    for latent in range(gen.topology.num_layers):
        means = sigmoid(gen_logits_for(gen, latent, latents))
        log_pz = log_pz + bernoulli_log_prob(latents[latent], means).sum(axis=-1)
    observation = gen.layers[gen.topology.observation_layer]
    means = sigmoid(latents[0] @ observation.weight.T + observation.bias)
    log_pz = log_pz + bernoulli_log_prob(x, means).sum(axis=-1)
    return log_pz - log_qz


def sample_objective(gen: ModelParams, rec: ModelParams, x: np.ndarray, noise: NoiseState) -> np.ndarray:
    """Single-sample f for each noise element."""
    return evaluate_sample(gen, rec, x, noise).f


# objective(gen, rec, x, latents) -> f per configuration; latents may carry extra leading axes
Objective = Callable[[ModelParams, ModelParams, np.ndarray, List[np.ndarray]], np.ndarray]

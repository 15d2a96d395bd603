"""
Marginalized-reparameterization estimator

For every latent unit i the estimator sums f over both values of z_i,
simulating the units downstream of i with the SAME noise, and weights the
two results by the gradient of q_i:

    Delta_i = (f1 - f0) * d mu_i / d phi_i

One of the two configurations is the base sample itself, so each unit costs
one extra simulation. Flipping z_i only moves the logits of the layers that
read it by a rank-one term, and every factor of f that does not involve a
changed unit is reused from the base pass.
"""
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np
from loguru import logger

from src.core.parallel import parallel_map
from src.services.objective.elbo import ForwardPass, Objective, evaluate_sample, gen_logits_for
from src.services.sbn.gradients import GradientAccumulator, LogitSignals
from src.services.sbn.network import ModelParams, NoiseState, UnitAddress, bernoulli_log_prob, sigmoid

# Upper bound on elements of the widest intermediate array per unit chunk.
CHUNK_ELEMENTS = 1 << 21


@dataclass
class _Downstream:
    latents: List[np.ndarray]  # layers after `latent` carry a leading unit axis
    delta: np.ndarray          # +1 where the flip sets the bit, -1 where it clears it; [C, B]
    log_q: np.ndarray          # [C, B]


def _simulate_downstream(rec: ModelParams, base: ForwardPass, latent: int, units: np.ndarray) -> _Downstream:
    count = units.shape[0]
    z_l = base.latents[latent]
    bits = z_l[:, units].T
    delta = 1.0 - 2.0 * bits

    flipped = np.broadcast_to(z_l, (count,) + z_l.shape).copy()
    flipped[np.arange(count), :, units] = 1.0 - bits
    latents: List[np.ndarray] = list(base.latents[:latent]) + [flipped]

    # factors before `latent` are unchanged; factor `latent` changes at u only
    rec_sums = base.rec_term_sums()
    means_l = base.rec_means(latent)[:, units].T
    log_q = sum(rec_sums[: latent + 1])
    log_q = log_q + (bernoulli_log_prob(1.0 - bits, means_l) - base.rec_log_probs[latent][:, units].T)
    for k in range(latent + 1, rec.topology.num_layers):
        layer = rec.layers[k]
        if k == latent + 1:
            logits = base.rec_logits[k][None] + delta[:, :, None] * layer.weight[:, units].T[:, None, :]
        else:
            logits = latents[k - 1] @ layer.weight.T + layer.bias
        means = sigmoid(logits)
        z = (base.noise[k][None] < means).astype(means.dtype)
        latents.append(z)
        log_q = log_q + bernoulli_log_prob(z, means).sum(axis=-1)
    return _Downstream(latents=latents, delta=delta, log_q=log_q)


def _log_p_flipped(gen: ModelParams, base: ForwardPass, latent: int, units: np.ndarray, down: _Downstream) -> np.ndarray:
    # factors touching layers >= latent are recomputed; the one reading z_latent gets a rank-one update
    gen_sums = base.gen_term_sums()
    delta = down.delta[:, :, None]
    log_p = 0.0
    for k in range(gen.topology.num_layers):
        if k >= latent:
            means = sigmoid(gen_logits_for(gen, k, down.latents))
            log_p = log_p + bernoulli_log_prob(down.latents[k], means).sum(axis=-1)
        elif k == latent - 1:
            layer = gen.layers[gen.topology.consuming_layer(latent)]
            logits = base.gen_logits[k][None] + delta * layer.weight[:, units].T[:, None, :]
            log_p = log_p + bernoulli_log_prob(base.latents[k][None], sigmoid(logits)).sum(axis=-1)
        else:
            log_p = log_p + gen_sums[k]
    if latent == 0:
        layer = gen.layers[gen.topology.observation_layer]
        logits = base.obs_logits[None] + delta * layer.weight[:, units].T[:, None, :]
        log_p = log_p + bernoulli_log_prob(base.x[None], sigmoid(logits)).sum(axis=-1)
    else:
        log_p = log_p + base.obs_log_probs.sum(axis=-1)
    return log_p


def flipped_objective(
    gen: ModelParams,
    rec: ModelParams,
    base: ForwardPass,
    latent: int,
    units: np.ndarray,
    objective: Optional[Objective] = None,
) -> np.ndarray:
    """
    f with z_u flipped, for each u in `units` of latent layer `latent`.

    Returns [len(units), B]. Layers closer to x keep their sampled values;
    later recognition layers are re-thresholded against the base noise.
    A custom objective is evaluated on the flipped configurations directly.
    """
    units = np.asarray(units, dtype=np.intp)
    down = _simulate_downstream(rec, base, latent, units)
    shape = (units.shape[0], base.batch_size)
    if objective is not None:
        return np.broadcast_to(objective(gen, rec, base.x, down.latents), shape)
    return _log_p_flipped(gen, base, latent, units, down) - down.log_q


@dataclass
class MarginalDifferences:
    """Base sample plus f with each unit flipped, [B, H_l] per latent layer."""
    forward: ForwardPass
    base_f: np.ndarray
    flipped: List[np.ndarray]

    def f_pair(self, latent: int) -> Tuple[np.ndarray, np.ndarray]:
        """(f0, f1): f with the unit clamped to 0 and to 1."""
        base = self.base_f[:, None]
        on = self.forward.latents[latent] == 1
        f1 = np.where(on, base, self.flipped[latent])
        f0 = np.where(on, self.flipped[latent], base)
        return f0, f1

    def differences(self, latent: int) -> np.ndarray:
        f0, f1 = self.f_pair(latent)
        return f1 - f0

    def logit_signals(self, include_direct_term: bool = False) -> LogitSignals:
        signals, parents = {}, {}
        for latent in range(len(self.flipped)):
            key = f"layers.{latent}"
            means = self.forward.rec_means(latent)
            signal = self.differences(latent) * means * (1.0 - means)
            if include_direct_term:
                signal = signal - (self.forward.latents[latent] - means)
            signals[key] = signal
            parents[key] = self.forward.x if latent == 0 else self.forward.latents[latent - 1]
        return LogitSignals(signals=signals, parents=parents)


def _base_objective(gen: ModelParams, rec: ModelParams, forward: ForwardPass, objective: Optional[Objective]) -> np.ndarray:
    if objective is None:
        return forward.f
    return np.broadcast_to(objective(gen, rec, forward.x, forward.latents), (forward.batch_size,))


def _chunk_size(rec: ModelParams, gen: ModelParams, batch: int, unit_chunk: int) -> int:
    if unit_chunk > 0:
        return unit_chunk
    widest = max(max(rec.topology.layer_sizes), max(gen.topology.layer_sizes))
    return max(1, CHUNK_ELEMENTS // (batch * widest))


def marginalized_signals(
    gen: ModelParams,
    rec: ModelParams,
    x: np.ndarray,
    noise: NoiseState,
    unit_chunk: int = 0,
    threads: Optional[int] = None,
    forward: Optional[ForwardPass] = None,
    objective: Optional[Objective] = None,
) -> MarginalDifferences:
    if forward is None:
        forward = evaluate_sample(gen, rec, x, noise)
    chunk = _chunk_size(rec, gen, forward.batch_size, unit_chunk)

    work = []
    for latent in range(rec.topology.num_layers):
        size = rec.topology.latent_size(latent)
        for start in range(0, size, chunk):
            work.append((latent, np.arange(start, min(start + chunk, size))))
    results = parallel_map(
        lambda item: flipped_objective(gen, rec, forward, item[0], item[1], objective),
        work,
        threads,
    )

    flipped = [np.empty_like(z) for z in forward.latents]
    for (latent, units), values in zip(work, results):
        flipped[latent][:, units] = values.T
    logger.debug(f"Marginalized {rec.topology.total_units} units in {len(work)} chunks (batch {forward.batch_size})")
    return MarginalDifferences(forward=forward, base_f=_base_objective(gen, rec, forward, objective), flipped=flipped)


def estimate_marginalized(
    gen: ModelParams,
    rec: ModelParams,
    x: np.ndarray,
    noise: NoiseState,
    include_direct_term: bool = False,
    unit_chunk: int = 0,
    threads: Optional[int] = None,
    objective: Optional[Objective] = None,
) -> GradientAccumulator:
    """Batch-mean marginalized gradient of E_q f w.r.t. the recognition parameters."""
    differences = marginalized_signals(gen, rec, x, noise, unit_chunk=unit_chunk, threads=threads, objective=objective)
    return differences.logit_signals(include_direct_term).to_gradient(rec)


def inner_expectation(
    gen: ModelParams,
    rec: ModelParams,
    x: np.ndarray,
    noise: NoiseState,
    unit: UnitAddress,
    objective: Optional[Objective] = None,
) -> Tuple[Union[float, np.ndarray], Union[float, np.ndarray]]:
    """(f0, f1) for one unit under the given noise; floats for a single element."""
    unit.validate(rec.topology)
    forward = evaluate_sample(gen, rec, x, noise)
    flipped = flipped_objective(gen, rec, forward, unit.layer, np.array([unit.unit]), objective)[0]
    base = _base_objective(gen, rec, forward, objective)
    on = forward.latents[unit.layer][:, unit.unit] == 1
    f1 = np.where(on, base, flipped)
    f0 = np.where(on, flipped, base)
    if not noise.is_batched:
        return float(f0[0]), float(f1[0])
    return f0, f1

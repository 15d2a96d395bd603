"""
Variational bound of the negative log-likelihood

For each image the bound is -(1/S) sum_s f(x, z_s) with z_s ~ q(z|x), in
nats. Images are processed in blocks whose noise comes from a counter-derived
seed, so results do not depend on the thread count.
"""
from typing import Optional

import numpy as np
from loguru import logger

from src.core.errors import EmptyDatasetError, InvalidParameterError
from src.core.parallel import parallel_map
from src.core.seeding import Stream, derive_rng
from src.services.objective.elbo import check_pair, sample_objective
from src.services.sbn.network import ModelParams, NoiseState

# noise elements per evaluation block
BLOCK_ELEMENTS = 10_000


def per_image_bounds(
    gen: ModelParams,
    rec: ModelParams,
    images: np.ndarray,
    samples: int,
    seed: int,
    threads: Optional[int] = None,
) -> np.ndarray:
    """Bound per image, shape [N]."""
    check_pair(gen, rec)
    if samples < 1:
        raise InvalidParameterError(f"samples must be >= 1, got {samples}")
    images = np.atleast_2d(np.asarray(images))
    if images.shape[0] == 0:
        raise EmptyDatasetError("Cannot evaluate a bound on zero images")

    per_block = max(1, BLOCK_ELEMENTS // samples)
    starts = list(range(0, images.shape[0], per_block))

    def run_block(item):
        index, start = item
        block = images[start:start + per_block].astype(rec.dtype)
        x = np.repeat(block, samples, axis=0)
        noise = NoiseState.draw(rec.topology, derive_rng(seed, Stream.EVALUATION, index), batch=x.shape[0], dtype=rec.dtype)
        f = sample_objective(gen, rec, x, noise)
        return -f.reshape(block.shape[0], samples).mean(axis=1)

    bounds = np.concatenate(parallel_map(run_block, list(enumerate(starts)), threads))
    logger.debug(f"Bound on {images.shape[0]} images x {samples} samples: {bounds.mean():.4f}")
    return bounds


def evaluate_bound(
    gen: ModelParams,
    rec: ModelParams,
    images: np.ndarray,
    samples: int,
    seed: int,
    threads: Optional[int] = None,
) -> float:
    """Mean bound over the images, nats per image."""
    return float(per_image_bounds(gen, rec, images, samples, seed, threads).mean())

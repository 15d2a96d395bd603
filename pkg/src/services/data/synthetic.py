"""
Synthetic binary datasets sampled from a small random generative SBN
"""
from typing import Optional, Sequence, Union

import numpy as np
from loguru import logger

from src.core.errors import InvalidParameterError
from src.core.seeding import Stream, derive_rng, derive_seed
from src.services.data.datasets import BinaryDataset, Split
from src.services.sbn.network import Direction, ModelParams, NoiseState, Topology, random_params, reparam_forward, sample_observations

MAX_SYNTHETIC_DIM = 64


def synthetic_dataset(
    num_images: int,
    dim: int,
    generator_seed: int,
    architecture: Union[str, Sequence[int]] = (8,),
    generator: Optional[ModelParams] = None,
    valid_fraction: float = 0.0,
    test_fraction: float = 0.0,
    weight_scale: float = 2.0,
    bias_scale: float = 1.0,
) -> BinaryDataset:
    """
    Ancestral samples x ~ p(x) from a random generative net.

    A given `generator` overrides the architecture and seed. The last
    test_fraction of images form the test split, the valid_fraction before
    them the validation split.
    """
    if num_images < 1:
        raise InvalidParameterError(f"num_images must be >= 1, got {num_images}")
    if not 1 <= dim <= MAX_SYNTHETIC_DIM:
        raise InvalidParameterError(f"Synthetic dim must lie in [1, {MAX_SYNTHETIC_DIM}], got {dim}")
    if valid_fraction < 0 or test_fraction < 0 or valid_fraction + test_fraction >= 1:
        raise InvalidParameterError("Split fractions must be >= 0 and leave a non-empty training split")

    if generator is None:
        topology = Topology.from_architecture(architecture, dim, Direction.GENERATIVE)
        generator = random_params(
            topology, derive_seed(generator_seed, Stream.INIT_GENERATIVE), weight_scale, bias_scale
        )
    elif not generator.topology.is_generative or generator.topology.data_size != dim:
        raise InvalidParameterError(f"Generator must be a generative net over {dim} pixels")

    rng = derive_rng(generator_seed, Stream.DATA)
    noise = NoiseState.draw(generator.topology, rng, batch=num_images)
    latents = reparam_forward(generator, None, noise)
    images = sample_observations(generator, latents, rng).astype(np.uint8)

    n_test = int(round(num_images * test_fraction))
    n_valid = int(round(num_images * valid_fraction))
    n_train = num_images - n_valid - n_test
    splits = {
        Split.TRAIN: np.arange(0, n_train),
        Split.VALID: np.arange(n_train, n_train + n_valid),
        Split.TEST: np.arange(n_train + n_valid, num_images),
    }
    provenance = {
        "source": "synthetic",
        "generator_seed": generator_seed,
        "generator_architecture": generator.topology.architecture,
    }
    logger.debug(f"Synthetic dataset: {num_images} images, {dim} pixels, SBN({generator.topology.architecture})")
    return BinaryDataset(images, splits, provenance, generator=generator)

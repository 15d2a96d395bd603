"""
Binarized image datasets and the MNIST loader

Images are stored as uint8 bits [N, D]; callers convert batches to float.
Binarization is drawn once per seed and recorded in the provenance.
"""
import hashlib
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
from loguru import logger

from src.core.errors import EmptyDatasetError, InvalidParameterError
from src.services.data.idx import IMAGES_MAGIC, check_shape, load_idx
from src.services.sbn.network import ModelParams

MNIST_TRAIN_IMAGES = "train-images-idx3-ubyte"
MNIST_TEST_IMAGES = "t10k-images-idx3-ubyte"
MNIST_VALID_SIZE = 10_000
_BINARIZE_ROWS = 10_000


class Split(str, Enum):
    TRAIN = "train"
    VALID = "valid"
    TEST = "test"


@dataclass
class BinaryDataset:
    """Bit matrix with named, disjoint splits."""
    images: np.ndarray
    splits: Dict[Split, np.ndarray]
    provenance: Dict[str, Any] = field(default_factory=dict)
    generator: Optional[ModelParams] = None

    def __post_init__(self):
        if self.images.ndim != 2:
            raise InvalidParameterError(f"Dataset images must be [N, D], got shape {self.images.shape}")
        self.splits = {Split(name): np.asarray(indices, dtype=np.int64) for name, indices in self.splits.items()}

    @property
    def data_size(self) -> int:
        return self.images.shape[1]

    @property
    def digest(self) -> str:
        """sha256 over the shape and the bit matrix."""
        hasher = hashlib.sha256()
        hasher.update(np.asarray(self.images.shape, dtype=np.int64).tobytes())
        hasher.update(np.ascontiguousarray(self.images, dtype=np.uint8).tobytes())
        return hasher.hexdigest()

    def size(self, split: Union[Split, str]) -> int:
        return int(self.splits.get(Split(split), np.empty(0)).shape[0])

    def split(self, split: Union[Split, str]) -> np.ndarray:
        return self.images[self.splits[Split(split)]]

    def subset(self, split: Union[Split, str], limit: int = 0) -> np.ndarray:
        """First `limit` images of a split (all when limit is 0)."""
        images = self.split(split)
        if limit > 0:
            images = images[:limit]
        if images.shape[0] == 0:
            raise EmptyDatasetError(f"Split '{Split(split).value}' is empty")
        return images

    def summary(self) -> Dict[str, Any]:
        return {
            "data_size": self.data_size,
            "sizes": {name.value: int(indices.shape[0]) for name, indices in self.splits.items()},
            "digest": self.digest,
            **self.provenance,
        }


def binarize(
    raw: np.ndarray,
    seed: int,
    splits: Optional[Dict[Split, np.ndarray]] = None,
    provenance: Optional[Dict[str, Any]] = None,
) -> BinaryDataset:
    """Each pixel becomes 1 with probability intensity / 255, drawn once."""
    raw = np.asarray(raw)
    if raw.size and (raw.min() < 0 or raw.max() > 255):
        raise InvalidParameterError("Intensities must lie in [0, 255]")
    flat = raw.reshape(raw.shape[0], -1)
    rng = np.random.default_rng(seed)
    bits = np.empty(flat.shape, dtype=np.uint8)
    for start in range(0, flat.shape[0], _BINARIZE_ROWS):
        block = flat[start:start + _BINARIZE_ROWS]
        bits[start:start + _BINARIZE_ROWS] = rng.random(block.shape) < block / 255.0
    if splits is None:
        splits = {Split.TRAIN: np.arange(flat.shape[0])}
    return BinaryDataset(bits, splits, {**(provenance or {}), "binarize_seed": seed})


def _find_idx(directory: Path, stem: str) -> Path:
    for name in (stem, f"{stem}.gz"):
        candidate = directory / name
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"No {stem}[.gz] in {directory}")


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def load_mnist(directory: Union[str, Path], seed: int, valid_size: int = MNIST_VALID_SIZE) -> BinaryDataset:
    """
    MNIST from the official IDX files.

    train = first N-10,000 training images, valid = last 10,000 training
    images, test = the t10k file.
    """
    directory = Path(directory)
    train_path = _find_idx(directory, MNIST_TRAIN_IMAGES)
    test_path = _find_idx(directory, MNIST_TEST_IMAGES)
    train_raw = load_idx(train_path, expected_magic=IMAGES_MAGIC)
    test_raw = load_idx(test_path, expected_magic=IMAGES_MAGIC)
    check_shape(train_raw, (None, None, None), train_path)
    check_shape(test_raw, (None,) + train_raw.shape[1:], test_path)
    if train_raw.shape[0] <= valid_size:
        raise EmptyDatasetError(f"{train_path} has {train_raw.shape[0]} images; need more than {valid_size}")
    if train_raw.shape[0] != 60_000 or test_raw.shape[0] != 10_000:
        logger.warning(f"Non-standard MNIST sizes: {train_raw.shape[0]} train / {test_raw.shape[0]} test")

    n_train = train_raw.shape[0] - valid_size
    n_all = train_raw.shape[0] + test_raw.shape[0]
    splits = {
        Split.TRAIN: np.arange(0, n_train),
        Split.VALID: np.arange(n_train, train_raw.shape[0]),
        Split.TEST: np.arange(train_raw.shape[0], n_all),
    }
    provenance = {
        "source": "mnist",
        "files": {train_path.name: _file_digest(train_path), test_path.name: _file_digest(test_path)},
    }
    raw = np.concatenate([train_raw, test_raw], axis=0)
    dataset = binarize(raw, seed, splits, provenance)
    logger.info(f"MNIST loaded from {directory}: {dataset.summary()['sizes']} (digest {dataset.digest[:12]})")
    return dataset

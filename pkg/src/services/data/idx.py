"""
IDX file reader (MNIST distribution format)

Layout, big-endian:
    0000  32-bit magic: 0x00 0x00 <dtype> <ndim>   (0x00000803 images, 0x00000801 labels)
    0004  ndim x 32-bit dimension sizes
    ....  unsigned byte payload, row-major
Gzip-compressed files are detected by their header and read transparently.
"""
import gzip
import struct
import zlib
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from loguru import logger

from src.core.errors import IdxFormatError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
_UBYTE = 0x08
_GZIP_HEADER = b"\x1f\x8b"


def _read_bytes(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == _GZIP_HEADER:
        try:
            return gzip.decompress(raw)
        except (OSError, EOFError, zlib.error) as e:
            raise IdxFormatError(f"{path}: corrupt gzip stream: {e}") from e
    return raw


def load_idx(path: Union[str, Path], expected_magic: Optional[int] = None) -> np.ndarray:
    """Parse an unsigned-byte IDX file into an array of shape given by its header."""
    path = Path(path)
    data = _read_bytes(path)
    if len(data) < 4:
        raise IdxFormatError(f"{path}: file too short for an IDX header", expected_bytes=4, actual_bytes=len(data))

    (magic,) = struct.unpack(">I", data[:4])
    ndim = magic & 0xFF
    if magic >> 16 != 0 or (magic >> 8) & 0xFF != _UBYTE or magic not in (IMAGES_MAGIC, LABELS_MAGIC):
        raise IdxFormatError(f"{path}: bad IDX magic 0x{magic:08x}", observed_magic=magic)
    if expected_magic is not None and magic != expected_magic:
        raise IdxFormatError(
            f"{path}: IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}",
            observed_magic=magic,
        )

    header_bytes = 4 + 4 * ndim
    if len(data) < header_bytes:
        raise IdxFormatError(
            f"{path}: truncated header, expected {header_bytes} bytes, got {len(data)}",
            observed_magic=magic,
            expected_bytes=header_bytes,
            actual_bytes=len(data),
        )
    shape = struct.unpack(f">{ndim}I", data[4:header_bytes])
    expected = header_bytes + int(np.prod(shape, dtype=np.int64))
    if len(data) != expected:
        problem = "truncated" if len(data) < expected else "has trailing bytes"
        raise IdxFormatError(
            f"{path}: file {problem}, expected {expected} bytes, got {len(data)}",
            observed_magic=magic,
            expected_bytes=expected,
            actual_bytes=len(data),
        )

    array = np.frombuffer(data, dtype=np.uint8, offset=header_bytes).reshape(shape)
    logger.debug(f"Loaded IDX {path.name}: shape {shape}")
    return array


def check_shape(array: np.ndarray, expected: Sequence[Optional[int]], path: Union[str, Path]) -> None:
    """Dimension check; None matches any size."""
    if array.ndim != len(expected) or any(e is not None and e != s for e, s in zip(expected, array.shape)):
        raise IdxFormatError(f"{path}: dimensions {array.shape} do not match expected {tuple(expected)}")


def write_idx(path: Union[str, Path], array: np.ndarray, compress: bool = False) -> Path:
    """Write an unsigned-byte array as IDX (fixtures, exported datasets)."""
    path = Path(path)
    array = np.ascontiguousarray(array, dtype=np.uint8)
    if array.ndim not in (1, 3):
        raise IdxFormatError(f"IDX writer supports labels (1-D) and images (3-D), got {array.ndim}-D")
    magic = (_UBYTE << 8) | array.ndim
    payload = struct.pack(f">I{array.ndim}I", magic, *array.shape) + array.tobytes()
    if compress:
        payload = gzip.compress(payload)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)
    return path

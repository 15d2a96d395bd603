"""
Checkpoint container for SBN parameters

A checkpoint is an .npz archive holding one or more named models
("gen", "rec"). Arrays are stored as "{model}/{parameter}"; a JSON header
under "__meta__" records the format version, each model's topology and
free-form metadata such as the update step. Loading never unpickles.
"""
import json
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from loguru import logger

from src.core.errors import CheckpointFormatError, ShapeMismatchError
from src.services.sbn.network import ModelParams, Topology

FORMAT_NAME = "margrad-sbn"
FORMAT_VERSION = 1
_META_KEY = "__meta__"


def save_models(
    path: Union[str, Path],
    models: Dict[str, ModelParams],
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: Dict[str, np.ndarray] = {}
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "models": {},
        "metadata": metadata or {},
    }
    for name, params in models.items():
        if "/" in name:
            raise CheckpointFormatError(f"Model name may not contain '/': {name!r}")
        header["models"][name] = {"topology": params.topology.to_dict(), "dtype": str(params.dtype)}
        for key, value in params.named_arrays().items():
            arrays[f"{name}/{key}"] = value
    arrays[_META_KEY] = np.array(json.dumps(header))

    # Writing through a handle keeps numpy from appending ".npz" to the name
    with open(path, "wb") as handle:
        np.savez(handle, **arrays)
    logger.debug(f"Saved checkpoint {path} ({', '.join(models)})")
    return path


def load_models(path: Union[str, Path]) -> Tuple[Dict[str, ModelParams], Dict[str, Any]]:
    """Return ({name: params}, metadata)."""
    path = Path(path)
    try:
        archive = np.load(path, allow_pickle=False)
    except (ValueError, OSError) as e:
        raise CheckpointFormatError(f"Cannot read checkpoint {path}: {e}") from e

    with archive:
        if _META_KEY not in archive.files:
            raise CheckpointFormatError(f"{path} has no {_META_KEY} header")
        try:
            header = json.loads(str(archive[_META_KEY]))
        except json.JSONDecodeError as e:
            raise CheckpointFormatError(f"{path} has a corrupt header: {e}") from e
        if header.get("format") != FORMAT_NAME:
            raise CheckpointFormatError(f"{path} is not a {FORMAT_NAME} checkpoint")
        if header.get("version") != FORMAT_VERSION:
            raise CheckpointFormatError(
                f"{path} has format version {header.get('version')}, expected {FORMAT_VERSION}"
            )

        models: Dict[str, ModelParams] = {}
        for name, entry in header["models"].items():
            topology = Topology.from_dict(entry["topology"])
            prefix = f"{name}/"
            arrays = {key[len(prefix):]: archive[key] for key in archive.files if key.startswith(prefix)}
            try:
                models[name] = ModelParams.from_named_arrays(topology, arrays)
            except (KeyError, ShapeMismatchError) as e:
                raise CheckpointFormatError(f"{path}: model {name!r} is incomplete: {e}") from e
    return models, header.get("metadata", {})


def save_params(path: Union[str, Path], params: ModelParams, metadata: Optional[Dict[str, Any]] = None) -> Path:
    return save_models(path, {"model": params}, metadata)


def load_params(path: Union[str, Path]) -> ModelParams:
    models, _ = load_models(path)
    if len(models) != 1:
        raise CheckpointFormatError(f"{path} holds {len(models)} models; use load_models")
    return next(iter(models.values()))


def load_pair(path: Union[str, Path]) -> Tuple[ModelParams, ModelParams, Dict[str, Any]]:
    """Return (gen, rec, metadata) from a training checkpoint."""
    models, metadata = load_models(path)
    missing = [name for name in ("gen", "rec") if name not in models]
    if missing:
        raise CheckpointFormatError(
            f"{path} is not a training checkpoint: missing {', '.join(missing)} (holds {', '.join(models) or 'nothing'})"
        )
    return models["gen"], models["rec"], metadata

"""
Trained-network cache.

Sweeps train the same networks again and again (one per repetition, shared by
every strategy and fraction). This module keeps them on disk, keyed by a hash
of everything that determines the trained parameters.
"""

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Callable, Optional, Tuple, Union

import numpy as np

from services.dataio import Dataset
from services.mlp import NetworkParams, TrainResult, load_model, read_model_header, save_model
from schemas.config import DatasetRef, TrainConfig
from utils.errors import FormatError
from utils.logging_config import get_logger

logger = get_logger(__name__)  # pylint: disable=invalid-name

PathLike = Union[str, Path]


def dataset_fingerprint(data: Dataset) -> str:
    """Hex digest of a dataset's inputs and labels."""
    digest = hashlib.blake2b(digest_size=16)
    digest.update(np.ascontiguousarray(data.inputs, dtype=np.float64).tobytes())
    digest.update(np.ascontiguousarray(data.labels, dtype=np.int64).tobytes())
    return digest.hexdigest()


def cache_key(dataset: DatasetRef, content: str, architecture, train_config: TrainConfig) -> str:
    """
    Hex digest identifying a trained network.

    ``content`` is the ``dataset_fingerprint`` of the training split, so the
    same dataset reference resolved under another data root never shares an
    entry.
    """
    payload = json.dumps({
        "dataset": dataset.model_dump(exclude={"root"}),
        "content": content,
        "architecture": list(architecture),
        "train": train_config.model_dump(),
    }, sort_keys=True)
    return hashlib.blake2b(payload.encode("utf-8"), digest_size=16).hexdigest()


def get_or_train_model(key: str, train_fn: Callable[[], TrainResult], train_config: TrainConfig,
                       cache_dir: Optional[PathLike] = None) -> Tuple[NetworkParams, float, bool]:
    """
    Load the network stored under ``key`` or train and store it.

    Args:
        key (str): Cache key, see ``cache_key``.
        train_fn: Called on a miss; its result is written to the cache.
        train_config (TrainConfig): Stored in the model header.
        cache_dir (path, optional): Cache directory; ``None`` disables caching.

    Returns:
        The network, its training wall-clock seconds and whether it came from the cache.

    Raises:
        TrainingError: Propagated from ``train_fn``; nothing is cached then.
    """
    if cache_dir is None:
        result = train_fn()
        return result.params, result.seconds, False

    cache_dir = Path(cache_dir)
    path = cache_dir / f"{key}.npz"
    if path.exists():
        try:
            header = read_model_header(path)
            net = load_model(path)
            logger.info("Loaded cached model %s", path)
            return net, header.train_seconds or 0.0, True
        except FormatError as exc:
            logger.warning("Ignoring unreadable cache entry %s: %s", path, exc)

    result = train_fn()
    cache_dir.mkdir(parents=True, exist_ok=True)
    # Write then rename so concurrent workers never read a partial file.
    handle, temp_name = tempfile.mkstemp(dir=cache_dir, suffix=".npz.tmp")
    os.close(handle)
    try:
        save_model(result.params, temp_name, train_config=train_config,
                   seed=train_config.seed, train_seconds=result.seconds)
        os.replace(temp_name, path)
    finally:
        if os.path.exists(temp_name):
            os.remove(temp_name)
    logger.info("Cached trained model %s", path)
    return result.params, result.seconds, False

"""Shared fixtures: random kernels, small datasets and trained networks."""

from collections import Counter

import numpy as np
import pytest

from schemas.config import TrainConfig
from services.dataio import Dataset, synth_blobs
from services.dpp import DppKernel
from services.mlp import NetworkParams, train
from utils.settings import get_settings


def random_pd_matrix(n: int, seed: int, ridge: float = 0.1) -> np.ndarray:
    """Well-conditioned symmetric positive definite matrix."""
    rng = np.random.default_rng(seed)
    factor = rng.normal(size=(n, n))
    return factor @ factor.T / n + ridge * np.eye(n)


def total_variation(samples, oracle) -> float:
    """Total-variation distance between sampled subsets and exact ``(subset, p)`` pairs."""
    counts = Counter(samples)
    total = len(samples)
    return 0.5 * sum(abs(counts.get(subset, 0) / total - p) for subset, p in oracle)


@pytest.fixture
def random_kernel():
    def make(n: int, seed: int = 0, scale: float = 1.0) -> DppKernel:
        return DppKernel.from_matrix(scale * random_pd_matrix(n, seed))
    return make


@pytest.fixture(autouse=True)
def isolated_settings(monkeypatch, tmp_path):
    """Keep tests away from the user's data root, cache and log file."""
    monkeypatch.setenv("DIVNET_CACHE_DIR", str(tmp_path / "cache"))
    monkeypatch.delenv("DIVNET_LOG_FILE", raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture(scope="session")
def blobs():
    return synth_blobs(class_count=4, features=12, per_class=50, spread=0.05, seed=0)


@pytest.fixture(scope="session")
def blobs_train_config():
    return TrainConfig(learning_rate=0.5, momentum=0.9, batch_size=20,
                       error_threshold=0.02, max_epochs=100, seed=3)


@pytest.fixture(scope="session")
def trained_blobs_net(blobs, blobs_train_config):
    """Two-hidden-layer network trained on the blobs split."""
    initial = NetworkParams.initialize([12, 20, 12, 4], seed=3)
    return train(initial, blobs.train, blobs_train_config).params


@pytest.fixture
def tiny_dataset():
    rng = np.random.default_rng(7)
    return Dataset("tiny", rng.uniform(size=(8, 4)), np.array([0, 1, 2, 0, 1, 2, 0, 1]), 3)

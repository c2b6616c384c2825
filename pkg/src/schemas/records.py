"""
Schemas for the files and records the toolkit writes.

This module defines the pydantic models for per-run metrics, training epoch
logs, model file headers and serialized pruning decisions.
"""

from typing import List, Literal, Optional

from pydantic import BaseModel, Field

from schemas.config import TrainConfig

MODEL_FORMAT = "divnet-model"
MODEL_VERSION = 1
DECISION_FORMAT = "divnet-prune-decision"
DECISION_VERSION = 1
KERNEL_FORMAT = "divnet-dpp-kernel"
KERNEL_VERSION = 1

# Column order of metrics.csv.
METRICS_COLUMNS = [
    "strategy", "fraction", "seed", "train_error", "test_error",
    "expected_dpp_size", "t_train_s", "t_prune_s",
]


class MetricsRecord(BaseModel):
    """Error statistics of one (strategy, fraction, seed) cell."""
    strategy: str
    fraction: float = Field(..., gt=0, le=1)
    seed: int
    train_error: Optional[float] = Field(None, ge=0, le=1)
    test_error: Optional[float] = Field(None, ge=0, le=1)
    expected_dpp_size: Optional[float] = None
    t_train_s: float = 0.0
    t_prune_s: float = 0.0
    kept: Optional[int] = None
    failed: bool = False
    message: str = ""


class EpochRecord(BaseModel):
    """One line of a training log."""
    epoch: int
    loss: float
    train_error: float
    seconds: float
    width: List[int] = Field(default_factory=list, description="Hidden layer widths after the epoch.")


class ModelHeader(BaseModel):
    """Header stored alongside the parameters in a model file."""
    format: Literal["divnet-model"] = MODEL_FORMAT
    version: int = MODEL_VERSION
    layer_sizes: List[int]
    train_config: Optional[TrainConfig] = None
    seed: Optional[int] = None
    train_seconds: Optional[float] = None


class PruneDecisionFile(BaseModel):
    """Serialized pruning mask, optionally with fusion coefficients."""
    format: Literal["divnet-prune-decision"] = DECISION_FORMAT
    version: int = DECISION_VERSION
    layer_index: int = Field(..., ge=1)
    kept: List[int]
    removed: List[int]
    alphas: Optional[List[List[float]]] = Field(
        None, description="k x (n - k) coefficients, row i for kept neuron i."
    )
    strategy: Optional[str] = None

"""
Configuration schemas.

This module defines the pydantic models validating training settings, pruning
strategies and declarative experiment specifications. Config files are JSON
documents carrying ``"version": 1``.
"""

import json
from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from utils.errors import ConfigError

CONFIG_VERSION = 1


class StrictModel(BaseModel):
    """Base model rejecting unknown keys."""
    model_config = ConfigDict(extra="forbid")


class TrainConfig(StrictModel):
    """Mini-batch SGD settings for one training run."""
    learning_rate: float = Field(0.1, gt=0, description="SGD step size.")
    momentum: float = Field(0.9, ge=0, lt=1, description="Classical momentum coefficient.")
    batch_size: int = Field(100, ge=1, description="Instances per mini-batch.")
    error_threshold: float = Field(
        0.01, gt=0, lt=1,
        description="Training stops at the first epoch whose train error is below this value."
    )
    max_epochs: int = Field(200, ge=1, description="Hard cap on epochs.")
    seed: int = Field(0, ge=0, description="Seed for initialization and batch order.")


class DppOptions(StrictModel):
    """Kernel and sampler options for the ``dpp`` strategy."""
    beta: Union[float, Literal["auto"]] = Field(
        "auto", description="RBF bandwidth; 'auto' means 10 / |T|."
    )
    epsilon: float = Field(0.01, ge=0, description="Diagonal perturbation added to the kernel.")
    gamma_mode: Literal["paper", "exact"] = Field(
        "paper", description="Closed-form or bisection calibration of the kernel scale."
    )
    sampler: Literal["kdpp", "dpp", "best_of_m", "greedy"] = Field(
        "kdpp", description="Subset sampler variant."
    )
    best_of: int = Field(10, ge=1, description="Number of k-DPP draws for 'best_of_m'.")
    instance_cap: Optional[int] = Field(
        None, ge=1, description="Use at most this many training instances for the kernel."
    )

    @field_validator("beta")
    @classmethod
    def _positive_beta(cls, value):
        if value != "auto" and value <= 0:
            raise ValueError("beta must be positive or 'auto'")
        return value


class StrategyConfig(StrictModel):
    """One pruning strategy: how neurons are selected and whether they are fused."""
    kind: Literal["dpp", "random", "importance"]
    target_k: Optional[int] = Field(
        None, ge=1, description="Neurons to keep; set per cell by sweeps."
    )
    reweight: bool = Field(False, description="Fuse removed neurons into the kept ones.")
    dpp: DppOptions = Field(default_factory=DppOptions)
    ridge: float = Field(1e-8, ge=0, description="Ridge weight of the fusion least squares.")
    fusion_instance_cap: Optional[int] = Field(
        None, ge=1, description="Fit fusion coefficients on at most this many training instances."
    )
    seed: int = Field(0, ge=0)
    label: Optional[str] = Field(None, description="Series name in CSVs and plots.")

    @property
    def name(self) -> str:
        """Display label, derived from kind and reweighting when not set."""
        if self.label:
            return self.label
        if self.kind == "dpp" and self.reweight:
            return "divnet"
        return f"{self.kind}+reweight" if self.reweight else self.kind


class DatasetRef(StrictModel):
    """Where the data of an experiment comes from."""
    kind: Literal["mnist", "mnist_rot", "mnist_rot_synth", "cifar10", "blobs"]
    root: Optional[str] = Field(None, description="Overrides DIVNET_DATA_ROOT.")
    train_size: Optional[int] = Field(None, ge=1, description="Subsample the training split.")
    test_size: Optional[int] = Field(None, ge=1, description="Subsample the test split.")
    subsample_seed: int = Field(0, ge=0)
    class_count: int = Field(10, ge=1, description="Blobs only.")
    features: int = Field(20, ge=1, description="Blobs only.")
    per_class: int = Field(100, ge=1, description="Blobs only.")
    spread: float = Field(0.05, ge=0, description="Blobs only.")
    seed: int = Field(0, ge=0, description="Blobs and rotation seed.")


class PruneDuringTraining(StrictModel):
    """Interleave pruning with training every ``every_epochs`` epochs."""
    every_epochs: int = Field(..., ge=1)
    keep_fraction: float = Field(0.9, gt=0, lt=1, description="Fraction kept at each event.")
    min_width: int = Field(1, ge=1, description="Never prune a layer below this width.")
    strategy: StrategyConfig


class ExperimentSpec(StrictModel):
    """Declarative description of a pruning sweep."""
    version: Literal[1] = CONFIG_VERSION
    name: str = "experiment"
    description: str = ""
    dataset: DatasetRef
    architecture: List[int] = Field(..., min_length=3, description="Layer sizes incl. input and output.")
    train: TrainConfig = Field(default_factory=TrainConfig)
    strategies: List[StrategyConfig] = Field(default_factory=list)
    prune_fractions: List[float] = Field(default_factory=lambda: [0.1, 0.25, 0.5, 0.75, 1.0])
    target_layers: List[int] = Field(default_factory=lambda: [1], min_length=1)
    repetitions: int = Field(5, ge=1)
    base_seed: int = Field(0, ge=0)
    output_dir: str = "results"
    betas: List[float] = Field(default_factory=list, description="Used by the beta sweeps.")
    record_timings: bool = Field(False, description="Write wall-clock columns into metrics.csv.")
    workers: int = Field(1, ge=1, description="Parallel worker processes for sweep cells.")
    cache_models: bool = True
    prune_during_training: Optional[PruneDuringTraining] = None

    @field_validator("architecture")
    @classmethod
    def _positive_sizes(cls, value):
        if any(size < 1 for size in value):
            raise ValueError("layer sizes must be positive")
        return value

    @field_validator("prune_fractions")
    @classmethod
    def _increasing_fractions(cls, value):
        if any(not 0 < f <= 1 for f in value):
            raise ValueError("prune fractions must lie in (0, 1]")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("prune fractions must be strictly increasing")
        return value

    @field_validator("betas")
    @classmethod
    def _positive_betas(cls, value):
        if any(b <= 0 for b in value):
            raise ValueError("betas must be positive")
        return value

    @model_validator(mode="after")
    def _layers_exist(self):
        hidden = len(self.architecture) - 2
        for layer in self.target_layers:
            if not 1 <= layer <= hidden:
                raise ValueError(f"target layer {layer} is not a hidden layer (1..{hidden})")
        names = [s.name for s in self.strategies]
        if len(names) != len(set(names)):
            raise ValueError(f"strategy labels must be unique, got {names}")
        return self


def load_spec(path: Union[str, Path]) -> ExperimentSpec:
    """
    Read and validate an experiment spec.

    Raises:
        FileNotFoundError: If the file does not exist.
        ConfigError: If the file is not valid JSON or fails validation.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        return ExperimentSpec.model_validate(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    except ValidationError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

"""
Experiment runner.

Seeded sweeps over strategies, kept fractions and repetitions, the beta and
DPP-size sweeps, and the activation heat map export. Every sweep trains (or
loads cached) networks first, then evaluates independent cells, optionally in
worker processes, and writes all files from the calling process after a
deterministic sort.
"""

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from schemas.config import ExperimentSpec, PruneDuringTraining, StrategyConfig
from schemas.records import METRICS_COLUMNS, MetricsRecord
from services.dataio import Dataset, DataSplit, load_split
from services.dpp import build_kernel, expected_size, sample_dpp, sample_kdpp
from services.mlp import NetworkParams, classification_error, layer_activations, train
from services.numerics import Rng, derive_seed
from services.plotting import AxesSpec, aggregate, emit_plot
from services.prune import prune_layer, prune_network, target_for_fraction
from utils.errors import NumericError, PreconditionError, TrainingError
from utils.logging_config import get_logger
from utils.model_cache import cache_key, dataset_fingerprint, get_or_train_model
from utils.settings import get_settings

logger = get_logger(__name__)  # pylint: disable=invalid-name

PathLike = Union[str, Path]
DIVNET_STRATEGY = StrategyConfig(kind="dpp", reweight=True)


@dataclass
class TrainedNetwork:
    """Network of one repetition, or the reason it is missing."""
    repetition: int
    seed: int
    params: Optional[NetworkParams]
    train_seconds: float = 0.0
    message: str = ""


@dataclass
class CellResult:
    record: MetricsRecord
    repetition: int
    phases: Dict[str, float] = field(default_factory=dict)


def training_seed(base_seed: int, repetition: int) -> int:
    """Seed of the network trained for ``repetition``."""
    return derive_seed(base_seed, "train", repetition)


def cell_seed(base_seed: int, strategy: str, fraction: float, repetition: int) -> int:
    """
    Pruning seed of one sweep cell.

    Derived from the strategy name, fraction and repetition only, so adding or
    removing a strategy leaves every other cell unchanged.
    """
    return derive_seed(base_seed, strategy, float(fraction), repetition)


def prune_during_training_hook(schedule: PruneDuringTraining, data: Dataset, layers: Sequence[int],
                               seed: int) -> Callable[[int, NetworkParams], Optional[NetworkParams]]:
    """
    End-of-epoch hook shrinking ``layers`` to ``schedule.keep_fraction`` of
    their width every ``schedule.every_epochs`` epochs, never below
    ``schedule.min_width``.
    """
    def hook(epoch: int, net: NetworkParams) -> Optional[NetworkParams]:
        if epoch % schedule.every_epochs:
            return None
        pruned = net
        for layer in sorted(layers):
            width = pruned.layer_sizes[layer]
            target = max(schedule.min_width, target_for_fraction(width, schedule.keep_fraction))
            if target >= width:
                continue
            cfg = schedule.strategy.model_copy(update={
                "target_k": target, "seed": derive_seed(seed, "during-training", epoch, layer),
            })
            pruned, _, _ = prune_layer(pruned, data, layer, cfg)
        if pruned is net:
            return None
        logger.info("Epoch %d: pruned to hidden widths %s", epoch, pruned.layer_sizes[1:-1])
        return pruned

    return hook


def _resolve_cache_dir(spec: ExperimentSpec, cache_dir: Optional[PathLike]) -> Optional[Path]:
    if not spec.cache_models:
        return None
    return Path(cache_dir or get_settings().cache_dir)


def train_networks(spec: ExperimentSpec, split: DataSplit,
                   cache_dir: Optional[PathLike] = None) -> List[TrainedNetwork]:
    """
    One trained network per repetition.

    A repetition whose training diverges yields ``params=None`` and the
    divergence message; the sweep continues with the others.
    """
    cache_dir = _resolve_cache_dir(spec, cache_dir)
    networks = []
    content = dataset_fingerprint(split.train) if cache_dir is not None else ""
    for repetition in range(spec.repetitions):
        seed = training_seed(spec.base_seed, repetition)
        train_cfg = spec.train.model_copy(update={"seed": seed})
        hook = None
        if spec.prune_during_training is not None:
            hook = prune_during_training_hook(spec.prune_during_training, split.train,
                                              spec.target_layers, seed)

        def run(train_cfg=train_cfg, hook=hook):
            initial = NetworkParams.initialize(spec.architecture, train_cfg.seed)
            return train(initial, split.train, train_cfg, on_epoch_end=hook)

        key = cache_key(spec.dataset, content, spec.architecture, train_cfg)
        if spec.prune_during_training is not None:
            schedule = derive_seed(0, spec.prune_during_training.model_dump_json(), spec.target_layers)
            key = f"{key}-{schedule:016x}"
        try:
            params, seconds, cached = get_or_train_model(key, run, train_cfg, cache_dir)
        except TrainingError as exc:
            logger.error("Repetition %d: %s", repetition, exc)
            networks.append(TrainedNetwork(repetition, seed, None, message=str(exc)))
            continue
        logger.info("Repetition %d: network %s (%s, %.1fs training)", repetition, params.layer_sizes,
                    "cached" if cached else "trained", seconds)
        networks.append(TrainedNetwork(repetition, seed, params, seconds))
    return networks


def evaluate_cell(net: TrainedNetwork, split: DataSplit, strategy: StrategyConfig, fraction: float,
                  layers: Sequence[int], base_seed: int) -> CellResult:
    """Prune one trained network with one strategy to one fraction and measure its errors."""
    if net.params is None:
        record = MetricsRecord(strategy=strategy.name, fraction=fraction, seed=net.seed,
                               failed=True, message=net.message)
        return CellResult(record, net.repetition)

    cfg = strategy.model_copy(update={"seed": cell_seed(base_seed, strategy.name, fraction, net.repetition)})
    start = time.perf_counter()
    phases: Dict[str, float] = {}
    expected = None
    try:
        pruned, _, diagnostics = prune_network(net.params, split.train, layers, fraction, cfg)
    except (NumericError, PreconditionError) as exc:
        logger.error("%s at fraction %.2f, repetition %d failed: %s",
                     strategy.name, fraction, net.repetition, exc)
        record = MetricsRecord(strategy=strategy.name, fraction=fraction, seed=net.seed,
                               t_train_s=net.train_seconds, failed=True, message=str(exc))
        return CellResult(record, net.repetition)
    prune_seconds = time.perf_counter() - start
    for info in diagnostics:
        for phase, seconds in info.timings.items():
            phases[phase] = phases.get(phase, 0.0) + seconds
    if diagnostics and diagnostics[0].expected_size is not None:
        expected = diagnostics[0].expected_size

    record = MetricsRecord(
        strategy=strategy.name,
        fraction=fraction,
        seed=net.seed,
        train_error=classification_error(pruned, split.train),
        test_error=classification_error(pruned, split.test),
        expected_dpp_size=expected,
        t_train_s=net.train_seconds,
        t_prune_s=prune_seconds,
        kept=sum(pruned.layer_sizes[layer] for layer in layers),
    )
    return CellResult(record, net.repetition, phases)


_WORKER_SPLIT: Optional[DataSplit] = None


def _init_worker(split: DataSplit) -> None:
    global _WORKER_SPLIT  # pylint: disable=global-statement
    _WORKER_SPLIT = split


def _evaluate_in_worker(net, strategy, fraction, layers, base_seed) -> CellResult:
    return evaluate_cell(net, _WORKER_SPLIT, strategy, fraction, layers, base_seed)


def _cells(spec: ExperimentSpec, networks: Sequence[TrainedNetwork]):
    for strategy in spec.strategies:
        for fraction in spec.prune_fractions:
            for net in networks:
                yield net, strategy, fraction


def evaluate_cells(spec: ExperimentSpec, split: DataSplit,
                   networks: Sequence[TrainedNetwork]) -> List[CellResult]:
    """
    Evaluate every (strategy, fraction, repetition) cell.

    Results come back in the order of ``spec.strategies``, then by
    fraction, then by repetition, however many workers ran them.
    """
    cells = list(_cells(spec, networks))
    if spec.workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers, initializer=_init_worker,
                                 initargs=(split,)) as pool:
            futures = [pool.submit(_evaluate_in_worker, net, strategy, fraction,
                                   spec.target_layers, spec.base_seed)
                       for net, strategy, fraction in cells]
            results = [future.result() for future in futures]
    else:
        results = []
        for index, (net, strategy, fraction) in enumerate(cells, start=1):
            results.append(evaluate_cell(net, split, strategy, fraction, spec.target_layers, spec.base_seed))
            logger.info("Cell %d/%d done: %s, fraction %.2f, repetition %d",
                        index, len(cells), strategy.name, fraction, net.repetition)

    order = {strategy.name: position for position, strategy in enumerate(spec.strategies)}
    results.sort(key=lambda r: (order[r.record.strategy], r.record.fraction, r.repetition))
    return results


def metrics_frame(records: Sequence[MetricsRecord], record_timings: bool) -> pd.DataFrame:
    """``metrics.csv`` contents; wall-clock columns stay empty unless ``record_timings``."""
    frame = pd.DataFrame([r.model_dump() for r in records], columns=list(MetricsRecord.model_fields))
    frame = frame[METRICS_COLUMNS].copy()
    if not record_timings:
        frame["t_train_s"] = None
        frame["t_prune_s"] = None
    return frame


def summary_frame(records: Sequence[MetricsRecord]) -> pd.DataFrame:
    """Mean and standard deviation of both errors per strategy and fraction."""
    train_stats = aggregate(records, "train_error").rename(
        columns={"mean": "train_error_mean", "std": "train_error_std", "count": "runs"})
    test_stats = aggregate(records, "test_error").rename(
        columns={"mean": "test_error_mean", "std": "test_error_std"}).drop(columns="count")
    return train_stats.merge(test_stats, on=["strategy", "fraction"], how="outer")


def timings_frame(results: Sequence[CellResult]) -> pd.DataFrame:
    rows = []
    for result in results:
        row = {"strategy": result.record.strategy, "fraction": result.record.fraction,
               "seed": result.record.seed, "t_train_s": result.record.t_train_s,
               "t_prune_s": result.record.t_prune_s}
        row.update({f"t_{phase}_s": seconds for phase, seconds in sorted(result.phases.items())})
        rows.append(row)
    return pd.DataFrame(rows)


def _plot(records: Sequence[MetricsRecord], spec: ExperimentSpec, column: str, path: Path) -> None:
    if not any(getattr(r, column) is not None for r in records):
        logger.warning("No successful cell; skipping %s", path)
        return
    emit_plot(records, AxesSpec(y=column, title=spec.name,
                                series_order=[s.name for s in spec.strategies]), path)


def run_experiment(spec: ExperimentSpec, data_root: Optional[PathLike] = None,
                   cache_dir: Optional[PathLike] = None) -> List[MetricsRecord]:
    """
    Run a full sweep and write its files into ``spec.output_dir``.

    Writes ``metrics.csv`` (one row per strategy, fraction and repetition),
    ``summary.csv``, ``timings.csv``, ``test_error.svg`` and ``train_error.svg``.
    Identical specs produce byte-identical CSV files.

    Returns:
        The metrics records in file order.
    """
    if not spec.strategies:
        raise PreconditionError("the experiment lists no strategy")
    logger.info("Running experiment %s", spec.name)
    split = load_split(spec.dataset, data_root)
    logger.info("Loaded %s: %d train / %d test instances, %d features", split.train.name,
                split.train.instance_count, split.test.instance_count, split.train.feature_count)
    networks = train_networks(spec, split, cache_dir)
    results = evaluate_cells(spec, split, networks)
    records = [result.record for result in results]

    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_frame(records, spec.record_timings).to_csv(out / "metrics.csv", index=False)
    summary_frame(records).to_csv(out / "summary.csv", index=False)
    timings_frame(results).to_csv(out / "timings.csv", index=False)
    _plot(records, spec, "test_error", out / "test_error.svg")
    _plot(records, spec, "train_error", out / "train_error.svg")
    logger.info("Wrote %s", out / "metrics.csv")
    return records


def _divnet_strategy(spec: ExperimentSpec) -> StrategyConfig:
    for strategy in spec.strategies:
        if strategy.kind == "dpp" and strategy.reweight:
            return strategy
    return DIVNET_STRATEGY


def _kernel_activations(net: NetworkParams, data: Dataset, layer: int, strategy: StrategyConfig, seed: int):
    return layer_activations(net, data, layer, instance_cap=strategy.dpp.instance_cap, seed=seed)


def beta_sweep(spec: ExperimentSpec, betas: Optional[Sequence[float]] = None,
               data_root: Optional[PathLike] = None, cache_dir: Optional[PathLike] = None) -> pd.DataFrame:
    """
    Influence of the kernel bandwidth on DivNet.

    For every beta and kept fraction below 1: mean, min and max train error
    after DivNet pruning over the repetitions, plus the expected size and the
    sizes of non-parametric DPP draws from the unscaled kernel of each target
    layer. Writes ``beta_sweep.csv`` and ``beta_sweep.svg``.
    """
    betas = list(betas if betas is not None else spec.betas)
    if not betas:
        raise PreconditionError("beta sweep needs at least one beta")
    if any(beta <= 0 for beta in betas):
        raise PreconditionError("betas must be positive")
    split = load_split(spec.dataset, data_root)
    networks = [n for n in train_networks(spec, split, cache_dir) if n.params is not None]
    base = _divnet_strategy(spec)

    rows = []
    records = []
    for beta in betas:
        # Same name as the base strategy, so cell seeds match run_experiment's.
        strategy = base.model_copy(update={"dpp": base.dpp.model_copy(update={"beta": beta})})
        series = f"beta={beta:g}"
        sizes = []
        expected = []
        for net in networks:
            for layer in spec.target_layers:
                acts = _kernel_activations(net.params, split.train, layer, strategy, net.seed)
                kernel = build_kernel(acts, beta=beta, epsilon=strategy.dpp.epsilon)
                expected.append(expected_size(kernel))
                sizes.append(sample_dpp(kernel, Rng(derive_seed(spec.base_seed, "beta", beta,
                                                               net.repetition, layer))).size)
        for fraction in spec.prune_fractions:
            if fraction >= 1.0:
                continue
            errors = []
            for net in networks:
                result = evaluate_cell(net, split, strategy, fraction, spec.target_layers, spec.base_seed)
                records.append(result.record.model_copy(update={"strategy": series}))
                if result.record.train_error is not None:
                    errors.append(result.record.train_error)
            rows.append({
                "beta": beta, "fraction": fraction,
                "train_error_mean": float(np.mean(errors)) if errors else None,
                "train_error_min": min(errors) if errors else None,
                "train_error_max": max(errors) if errors else None,
                "expected_dpp_size": float(np.mean(expected)) if expected else None,
                "dpp_size_mean": float(np.mean(sizes)) if sizes else None,
                "dpp_size_min": min(sizes) if sizes else None,
                "dpp_size_max": max(sizes) if sizes else None,
            })
        logger.info("beta %g: expected DPP size %.2f", beta, float(np.mean(expected)) if expected else float("nan"))

    frame = pd.DataFrame(rows)
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out / "beta_sweep.csv", index=False)
    if any(r.train_error is not None for r in records):
        emit_plot(records, AxesSpec(y="train_error", title=f"{spec.name}: influence of beta"),
                  out / "beta_sweep.svg")
    return frame


def dpp_size_sweep(spec: ExperimentSpec, betas: Optional[Sequence[float]] = None,
                   data_root: Optional[PathLike] = None, cache_dir: Optional[PathLike] = None) -> pd.DataFrame:
    """
    Expected DPP size and one non-parametric draw per hidden layer, beta and
    repetition. Writes ``dpp_size_sweep.csv``.
    """
    betas = list(betas if betas is not None else spec.betas) or ["auto"]
    split = load_split(spec.dataset, data_root)
    networks = [n for n in train_networks(spec, split, cache_dir) if n.params is not None]
    strategy = _divnet_strategy(spec)

    rows = []
    for net in networks:
        for layer in range(1, net.params.hidden_count + 1):
            acts = _kernel_activations(net.params, split.train, layer, strategy, net.seed)
            for beta in betas:
                kernel = build_kernel(acts, beta=beta, epsilon=strategy.dpp.epsilon)
                draw = sample_dpp(kernel, Rng(derive_seed(spec.base_seed, "size", str(beta),
                                                         net.repetition, layer)))
                rows.append({"layer": layer, "width": acts.neuron_count, "beta": kernel.beta,
                             "seed": net.seed, "expected_size": expected_size(kernel),
                             "sample_size": draw.size})

    frame = pd.DataFrame(rows)
    if not frame.empty:
        means = frame.groupby("layer")["expected_size"].mean()
        logger.info("Mean expected DPP size per hidden layer: %s",
                    ", ".join(f"{layer}: {size:.2f}" for layer, size in means.items()))
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out / "dpp_size_sweep.csv", index=False)
    return frame


def heatmap_export(net: NetworkParams, data: Dataset, layer: int, k: int, mode: str = "dpp",
                   seed: int = 0, path: Optional[PathLike] = None,
                   strategy: StrategyConfig = DIVNET_STRATEGY) -> Tuple[np.ndarray, List[int]]:
    """
    Activations of ``k`` neurons on one instance per class.

    ``first`` takes the lowest-index neurons; ``dpp`` draws them from the
    k-DPP of the layer's training activations. Rows are classes, columns the
    chosen neurons in ascending order. Written as CSV when ``path`` is given.

    Returns:
        The C x k grid and the neuron indices.

    Raises:
        PreconditionError: If some class has no instance or ``k`` is out of range.
    """
    if mode not in ("dpp", "first"):
        raise PreconditionError(f"unknown heat map mode {mode}")
    rows = data.one_per_class()
    width = net.layer_sizes[layer] if 1 <= layer <= net.hidden_count else 0
    if not 1 <= k <= width:
        raise PreconditionError(f"k must lie in [1, {width}], got {k}")

    if mode == "first" or k == width:
        neurons = list(range(k))
    else:
        acts = _kernel_activations(net, data, layer, strategy, seed)
        kernel = build_kernel(acts, beta=strategy.dpp.beta, epsilon=strategy.dpp.epsilon)
        neurons = list(sample_kdpp(kernel, k, Rng(seed)).indices)

    values = layer_activations(net, data.take(rows), layer).values[neurons].T
    if path is not None:
        frame = pd.DataFrame(values, columns=[f"neuron_{i}" for i in neurons])
        frame.insert(0, "label", data.labels[rows])
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False)
        logger.info("Wrote heat map %s", path)
    return values, neurons

"""
Neuron pruning module.

Selection strategies (DPP, random, importance), the fusion step transferring
removed neurons' contributions onto kept ones, and the network surgery that
produces the smaller network. ``divnet`` chains DPP selection and fusion.
"""

import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from schemas.config import StrategyConfig
from schemas.records import DECISION_VERSION, PruneDecisionFile
from services.dataio import Dataset
from services.dpp import (
    DppKernel, NeuronSubset, build_kernel, expected_size, greedy_map, rescale_to_k,
    sample_best_of_m, sample_dpp, sample_kdpp,
)
from services.mlp import ActivationMatrix, NetworkParams, layer_activations
from services.numerics import Rng, derive_seed, lstsq
from utils.errors import FormatError, NumericError, PreconditionError
from utils.logging_config import get_logger

logger = get_logger(__name__)  # pylint: disable=invalid-name

PathLike = Union[str, Path]
MAX_EMPTY_REDRAWS = 100


@dataclass(frozen=True)
class PruneDecision:
    """
    Which neurons of a hidden layer survive.

    ``alphas[:, r]`` expresses removed neuron ``removed[r]`` in the basis of the
    kept neurons; it is ``None`` until ``compute_fusion`` attaches it.
    """
    layer_index: int
    kept: Tuple[int, ...]
    removed: Tuple[int, ...]
    alphas: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        kept = tuple(sorted(int(i) for i in self.kept))
        removed = tuple(sorted(int(i) for i in self.removed))
        if not kept:
            raise PreconditionError("a layer must keep at least one neuron")
        if set(kept) & set(removed):
            raise PreconditionError("kept and removed neurons overlap")
        if set(kept) | set(removed) != set(range(len(kept) + len(removed))):
            raise PreconditionError("kept and removed neurons must cover the layer exactly")
        if self.layer_index < 1:
            raise PreconditionError("layer_index is 1-based")
        object.__setattr__(self, "kept", kept)
        object.__setattr__(self, "removed", removed)
        if self.alphas is not None:
            alphas = np.array(self.alphas, dtype=np.float64, copy=True)
            if alphas.shape != (len(kept), len(removed)):
                raise PreconditionError(
                    f"alphas shape {alphas.shape} != ({len(kept)}, {len(removed)})"
                )
            alphas.flags.writeable = False
            object.__setattr__(self, "alphas", alphas)

    @classmethod
    def from_kept(cls, layer_index: int, width: int, kept: Sequence[int]) -> "PruneDecision":
        """Decision keeping ``kept`` out of ``width`` neurons."""
        kept_set = {int(i) for i in kept}
        return cls(layer_index, tuple(kept_set), tuple(i for i in range(width) if i not in kept_set))

    @property
    def neuron_count(self) -> int:
        return len(self.kept) + len(self.removed)

    def with_alphas(self, alphas: np.ndarray) -> "PruneDecision":
        return replace(self, alphas=alphas)


@dataclass
class PruneDiagnostics:
    """What happened while pruning one layer."""
    strategy: str
    layer_index: int
    kept: int
    expected_size: Optional[float] = None
    scaled_expected_size: Optional[float] = None
    gamma: Optional[float] = None
    log_det: Optional[float] = None
    residual_norms: Optional[np.ndarray] = None
    kernel_instances: Optional[int] = None
    fusion_instances: Optional[int] = None
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def total_seconds(self) -> float:
        return float(sum(self.timings.values()))


def _check_target(target_k: Optional[int], width: int) -> int:
    if target_k is None or not 1 <= target_k < width:
        raise PreconditionError(f"target_k must satisfy 1 <= k < {width}, got {target_k}")
    return int(target_k)


def dpp_selection(acts: ActivationMatrix, cfg: StrategyConfig
                  ) -> Tuple[PruneDecision, DppKernel, NeuronSubset]:
    """
    DPP selection returning the kernel and subset alongside the decision.

    The kernel is built from ``acts``, rescaled to ``target_k`` with the
    configured gamma mode and sampled with the configured sampler. The ``dpp``
    sampler without a target samples the unscaled kernel.
    """
    width = acts.neuron_count
    options = cfg.dpp
    non_parametric = options.sampler == "dpp" and cfg.target_k is None
    if not non_parametric:
        _check_target(cfg.target_k, width)
    rng = Rng(cfg.seed)

    kernel = build_kernel(acts, beta=options.beta, epsilon=options.epsilon)
    if not non_parametric:
        kernel = rescale_to_k(kernel, cfg.target_k, mode=options.gamma_mode)

    if options.sampler == "kdpp":
        subset = sample_kdpp(kernel, cfg.target_k, rng)
    elif options.sampler == "best_of_m":
        subset = sample_best_of_m(kernel, cfg.target_k, options.best_of, rng)
    elif options.sampler == "greedy":
        subset = greedy_map(kernel, cfg.target_k)
    else:
        for _ in range(MAX_EMPTY_REDRAWS):
            subset = sample_dpp(kernel, rng)
            if subset.size:
                break
        else:
            raise NumericError(f"DPP returned the empty set {MAX_EMPTY_REDRAWS} times")
    decision = PruneDecision.from_kept(acts.layer_index, width, subset.indices)
    return decision, kernel, subset


def select_dpp(acts: ActivationMatrix, cfg: StrategyConfig) -> PruneDecision:
    """Keep a diverse subset of neurons sampled from the activation DPP."""
    decision, _, _ = dpp_selection(acts, cfg)
    return decision


def select_random(n: int, target_k: int, rng: Rng, layer_index: int = 1) -> PruneDecision:
    """Keep a uniformly random ``target_k``-subset of ``n`` neurons."""
    _check_target(target_k, n)
    kept = rng.choice(n, size=target_k, replace=False)
    return PruneDecision.from_kept(layer_index, n, kept)


def onorm(next_weights: np.ndarray) -> np.ndarray:
    """Mean absolute outgoing weight of every neuron (rows of ``next_weights``)."""
    return np.mean(np.abs(np.asarray(next_weights, dtype=np.float64)), axis=1)


def select_importance(next_weights: np.ndarray, target_k: int, layer_index: int = 1) -> PruneDecision:
    """
    Keep the ``target_k`` neurons with the largest onorm.

    Ties go to the lower index.
    """
    scores = onorm(next_weights)
    _check_target(target_k, scores.size)
    order = np.argsort(-scores, kind="stable")
    return PruneDecision.from_kept(layer_index, scores.size, order[:target_k])


def compute_fusion(acts: ActivationMatrix, decision: PruneDecision, ridge: float = 1e-8) -> PruneDecision:
    """
    Least-squares coefficients expressing every removed activation vector in
    the span of the kept ones.

    Solves ``min ||V_kept^T alpha_r - v_r||^2 + ridge * ||alpha_r||^2`` for
    each removed neuron ``r`` in one call.
    """
    if acts.neuron_count != decision.neuron_count:
        raise PreconditionError(
            f"activation matrix has {acts.neuron_count} neurons, decision covers {decision.neuron_count}"
        )
    kept = acts.values[list(decision.kept)].T
    removed = acts.values[list(decision.removed)].T
    alphas = lstsq(kept, removed, ridge=ridge)
    return decision.with_alphas(alphas)


def fusion_residuals(acts: ActivationMatrix, decision: PruneDecision) -> np.ndarray:
    """Norm of ``v_r - V_kept^T alpha_r`` for every removed neuron."""
    if decision.alphas is None:
        raise PreconditionError("decision has no fusion coefficients")
    kept = acts.values[list(decision.kept)]
    removed = acts.values[list(decision.removed)]
    return np.linalg.norm(removed - decision.alphas.T @ kept, axis=1)


def _surgery(net: NetworkParams, decision: PruneDecision, alphas: np.ndarray) -> NetworkParams:
    layer = decision.layer_index
    if not 1 <= layer <= net.hidden_count:
        raise PreconditionError(f"layer {layer} is not a hidden layer (1..{net.hidden_count})")
    width = net.layer_sizes[layer]
    if width != decision.neuron_count:
        raise PreconditionError(f"layer {layer} has {width} neurons, decision covers {decision.neuron_count}")
    if alphas.shape != (len(decision.kept), len(decision.removed)):
        raise PreconditionError(f"alphas shape {alphas.shape} does not match the decision")
    if not decision.removed:
        return net

    kept = list(decision.kept)
    removed = list(decision.removed)
    incoming = net.weights[layer - 1][:, kept]
    bias = net.biases[layer - 1][kept]
    outgoing = net.weights[layer][kept] + alphas @ net.weights[layer][removed]

    weights = list(net.weights)
    biases = list(net.biases)
    weights[layer - 1] = incoming
    biases[layer - 1] = bias
    weights[layer] = outgoing
    return NetworkParams(tuple(weights), tuple(biases))


def apply_fusion(net: NetworkParams, decision: PruneDecision) -> NetworkParams:
    """
    Remove the decision's neurons and fold them into the kept ones.

    Outgoing rows of kept neurons become ``w_ij + sum_r alpha_ir w_rj``; rows of
    removed neurons, their incoming columns and biases are deleted. Next-layer
    biases and every other layer are left untouched.
    """
    if decision.alphas is None:
        raise PreconditionError("apply_fusion needs a decision with fusion coefficients")
    return _surgery(net, decision, decision.alphas)


def prune_without_fusion(net: NetworkParams, decision: PruneDecision) -> NetworkParams:
    """Remove the decision's neurons without reweighting (all alphas zero)."""
    return _surgery(net, decision, np.zeros((len(decision.kept), len(decision.removed))))


def input_difference(acts: ActivationMatrix, next_weights: np.ndarray, decision: PruneDecision,
                     pruned_next_weights: np.ndarray) -> np.ndarray:
    """
    Per next-layer neuron, how much its input over the instances changed.

    Returns ``|| V_kept^T W~[:, j] - V^T W[:, j] ||_2`` for every column ``j``.
    """
    before = acts.values.T @ np.asarray(next_weights)
    after = acts.values[list(decision.kept)].T @ np.asarray(pruned_next_weights)
    return np.linalg.norm(after - before, axis=0)


def prune_layer(net: NetworkParams, data: Dataset, layer_index: int, cfg: StrategyConfig
                ) -> Tuple[NetworkParams, PruneDecision, PruneDiagnostics]:
    """
    Prune one hidden layer with any strategy, optionally fusing.

    Activations come from ``data``. ``cfg.dpp.instance_cap`` bounds the
    instances behind the kernel and ``cfg.fusion_instance_cap`` those behind
    the fusion least squares; each cap draws its own seeded subsample.
    """
    if not 1 <= layer_index <= net.hidden_count:
        raise PreconditionError(f"layer {layer_index} is not a hidden layer (1..{net.hidden_count})")
    diagnostics = PruneDiagnostics(strategy=cfg.name, layer_index=layer_index, kept=0)
    timings = diagnostics.timings
    width = net.layer_sizes[layer_index]

    start = time.perf_counter()
    kernel_acts = fuse_acts = None
    if cfg.kind == "dpp":
        kernel_acts = layer_activations(net, data, layer_index,
                                        instance_cap=cfg.dpp.instance_cap, seed=cfg.seed)
        diagnostics.kernel_instances = kernel_acts.instance_count
    if cfg.reweight:
        if cfg.fusion_instance_cap is None and kernel_acts is not None and cfg.dpp.instance_cap is None:
            fuse_acts = kernel_acts
        else:
            fuse_acts = layer_activations(net, data, layer_index, instance_cap=cfg.fusion_instance_cap,
                                          seed=derive_seed(cfg.seed, "fusion", layer_index))
        diagnostics.fusion_instances = fuse_acts.instance_count
    timings["activations"] = time.perf_counter() - start

    start = time.perf_counter()
    if cfg.kind == "dpp":
        decision, kernel, subset = dpp_selection(kernel_acts, cfg)
        diagnostics.expected_size = expected_size(kernel.with_gamma(1.0))
        diagnostics.scaled_expected_size = expected_size(kernel)
        diagnostics.gamma = kernel.gamma
        diagnostics.log_det = subset.log_det
    elif cfg.kind == "random":
        decision = select_random(width, _check_target(cfg.target_k, width), Rng(cfg.seed), layer_index)
    else:
        decision = select_importance(net.weights[layer_index], cfg.target_k, layer_index)
    timings["select"] = time.perf_counter() - start

    start = time.perf_counter()
    if cfg.reweight:
        decision = compute_fusion(fuse_acts, decision, ridge=cfg.ridge)
        diagnostics.residual_norms = fusion_residuals(fuse_acts, decision)
        pruned = apply_fusion(net, decision)
    else:
        pruned = prune_without_fusion(net, decision)
    timings["fuse"] = time.perf_counter() - start

    diagnostics.kept = len(decision.kept)
    logger.info(
        "Pruned layer %d with %s: kept %d of %d (expected DPP size %s) in %.3fs",
        layer_index, cfg.name, diagnostics.kept, width,
        "n/a" if diagnostics.expected_size is None else f"{diagnostics.expected_size:.2f}",
        diagnostics.total_seconds,
    )
    return pruned, decision, diagnostics


def divnet(net: NetworkParams, data: Dataset, layer_index: int, cfg: StrategyConfig
           ) -> Tuple[NetworkParams, PruneDecision, PruneDiagnostics]:
    """
    DPP selection followed by fusion on one hidden layer.

    ``cfg.kind`` must be ``dpp``; reweighting is always applied.
    """
    if cfg.kind != "dpp":
        raise PreconditionError(f"divnet needs a dpp strategy, got {cfg.kind}")
    return prune_layer(net, data, layer_index, cfg.model_copy(update={"reweight": True}))


def target_for_fraction(width: int, fraction: float) -> int:
    """Neurons kept for a fraction of ``width``: ``round(fraction * width)``, at least one."""
    return max(1, int(round(fraction * width)))


def prune_network(net: NetworkParams, data: Dataset, layers: Sequence[int], fraction: float,
                  cfg: StrategyConfig) -> Tuple[NetworkParams, List[PruneDecision], List[PruneDiagnostics]]:
    """
    Prune several hidden layers front to back to ``fraction`` of their width.

    Activations are recomputed after each layer's surgery. Each layer gets its
    own seed derived from ``cfg.seed``. Layers whose target equals their width
    are left untouched.
    """
    decisions = []
    diagnostics = []
    for layer in sorted(layers):
        width = net.layer_sizes[layer]
        target = target_for_fraction(width, fraction)
        if target >= width:
            continue
        layer_cfg = cfg.model_copy(update={"target_k": target,
                                           "seed": derive_seed(cfg.seed, "layer", layer)})
        net, decision, info = prune_layer(net, data, layer, layer_cfg)
        decisions.append(decision)
        diagnostics.append(info)
    return net, decisions, diagnostics


def save_decision(decision: PruneDecision, path: PathLike, strategy: Optional[str] = None) -> None:
    """Write a decision (and its coefficients, if any) as JSON."""
    record = PruneDecisionFile(
        layer_index=decision.layer_index,
        kept=list(decision.kept),
        removed=list(decision.removed),
        alphas=None if decision.alphas is None else decision.alphas.tolist(),
        strategy=strategy,
    )
    Path(path).write_text(record.model_dump_json(indent=2), encoding="utf-8")


def load_decision(path: PathLike) -> PruneDecision:
    """Read a decision written by ``save_decision``."""
    try:
        record = PruneDecisionFile.model_validate_json(Path(path).read_text(encoding="utf-8"))
        if record.version != DECISION_VERSION:
            raise ValueError(f"unsupported version {record.version}")
        alphas = None
        if record.alphas is not None:
            alphas = np.array(record.alphas, dtype=np.float64).reshape(len(record.kept), len(record.removed))
        return PruneDecision(record.layer_index, tuple(record.kept), tuple(record.removed), alphas)
    except (ValidationError, PreconditionError, ValueError) as exc:
        raise FormatError(f"{path}: invalid prune decision: {exc}") from exc

"""
``prune``: prune a saved model, or replay a saved decision, and write the
pruned model plus one decision file per pruned layer.
"""

from argparse import Namespace
from pathlib import Path
from typing import get_args

from pydantic import ValidationError

from commands.common import add_config_argument, print_json
from schemas.config import DatasetRef, DppOptions, StrategyConfig, load_spec
from services.dataio import load_split
from services.mlp import classification_error, layer_activations, load_model, save_model
from services.prune import (
    apply_fusion, compute_fusion, load_decision, prune_network, prune_without_fusion, save_decision,
)
from utils.errors import ConfigError
from utils.logging_config import get_logger

logger = get_logger(__name__)  # pylint: disable=invalid-name


def register(subparsers) -> None:
    parser = subparsers.add_parser("prune", help="Prune hidden layers of a saved model.")
    add_config_argument(parser, required=False)
    parser.add_argument("--dataset", choices=get_args(DatasetRef.model_fields["kind"].annotation),
                        help="Dataset the model was trained on, when no config is given (default mnist).")
    parser.add_argument("--model", required=True, help="Model file to prune.")
    parser.add_argument("--strategy", choices=["dpp", "random", "importance"], default="dpp")
    parser.add_argument("--keep", type=float, help="Fraction of neurons kept per layer, in (0, 1].")
    parser.add_argument("--reweight", action="store_true", help="Fuse removed neurons into kept ones.")
    parser.add_argument("--layer", type=int, action="append", dest="layers",
                        help="Hidden layer to prune (1-based, repeatable; default 1).")
    parser.add_argument("--sampler", choices=["kdpp", "dpp", "best_of_m", "greedy"], default="kdpp")
    parser.add_argument("--beta", type=float, help="RBF bandwidth (default 10 / instances).")
    parser.add_argument("--gamma-mode", choices=["paper", "exact"], default="paper")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--decision", help="Replay a saved decision instead of selecting.")
    parser.add_argument("--out", help="Output directory (default: the config's, else the model's directory).")
    parser.set_defaults(handler=handle)


def _strategy(args: Namespace) -> StrategyConfig:
    try:
        options = DppOptions(beta=args.beta if args.beta is not None else "auto",
                             sampler=args.sampler, gamma_mode=args.gamma_mode)
        return StrategyConfig(kind=args.strategy, reweight=args.reweight, dpp=options, seed=args.seed)
    except ValidationError as exc:
        raise ConfigError(f"invalid strategy flags: {exc}") from exc


def _dataset_and_output(args: Namespace):
    """Dataset reference and output directory from the config, the flags or their defaults."""
    if args.config:
        spec = load_spec(args.config)
        dataset = DatasetRef(kind=args.dataset) if args.dataset else spec.dataset
        return dataset, Path(args.out or spec.output_dir)
    return DatasetRef(kind=args.dataset or "mnist"), Path(args.out or Path(args.model).parent)


def handle(args: Namespace) -> int:
    dataset, out = _dataset_and_output(args)
    net = load_model(args.model)
    split = load_split(dataset)
    out.mkdir(parents=True, exist_ok=True)

    if args.decision:
        decision = load_decision(args.decision)
        if args.reweight:
            if decision.alphas is None:
                acts = layer_activations(net, split.train, decision.layer_index)
                decision = compute_fusion(acts, decision)
            pruned = apply_fusion(net, decision)
        else:
            pruned = prune_without_fusion(net, decision)
        decisions = [decision]
    else:
        if args.keep is None or not 0 < args.keep <= 1:
            raise ConfigError("--keep must lie in (0, 1]")
        layers = args.layers or [1]
        if any(not 1 <= layer <= net.hidden_count for layer in layers):
            raise ConfigError(f"--layer must lie in 1..{net.hidden_count}")
        pruned, decisions, _ = prune_network(net, split.train, layers, args.keep, _strategy(args))

    model_path = out / "pruned.npz"
    save_model(pruned, model_path)
    files = []
    for decision in decisions:
        path = out / f"decision_layer{decision.layer_index}.json"
        save_decision(decision, path, strategy=None if args.decision else _strategy(args).name)
        files.append(str(path))
    logger.info("Wrote %s and %d decision files", model_path, len(files))
    print_json({
        "model": str(model_path),
        "decisions": files,
        "layer_sizes": pruned.layer_sizes,
        "train_error": classification_error(pruned, split.train),
        "test_error": classification_error(pruned, split.test),
    })
    return 0

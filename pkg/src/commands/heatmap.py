"""``heatmap``: export activations of selected neurons on one instance per class."""

from argparse import Namespace
from pathlib import Path

from commands.common import add_config_argument, add_override_arguments, load_experiment, print_json
from services.dataio import load_split
from services.dpp import mean_pairwise_similarity
from services.experiment import DIVNET_STRATEGY, heatmap_export, train_networks
from services.mlp import layer_activations, load_model
from utils.errors import DivNetError


def register(subparsers) -> None:
    parser = subparsers.add_parser("heatmap", help="Activation heat map of DPP-selected or first neurons.")
    add_config_argument(parser)
    add_override_arguments(parser)
    parser.add_argument("--model", help="Model file (default: the config's first trained network).")
    parser.add_argument("--layer", type=int, default=1)
    parser.add_argument("--k", type=int, default=50, help="Number of neurons shown.")
    parser.add_argument("--mode", choices=["dpp", "first"], default="dpp")
    parser.set_defaults(handler=handle)


def handle(args: Namespace) -> int:
    spec = load_experiment(args)
    split = load_split(spec.dataset)
    if args.model:
        net = load_model(args.model)
    else:
        trained = train_networks(spec.model_copy(update={"repetitions": 1}), split)[0]
        if trained.params is None:
            raise DivNetError(trained.message)
        net = trained.params

    seed = spec.base_seed
    path = Path(spec.output_dir) / f"heatmap_{args.mode}_layer{args.layer}.csv"
    strategy = next((s for s in spec.strategies if s.kind == "dpp"), DIVNET_STRATEGY)
    _, neurons = heatmap_export(net, split.train, args.layer, args.k, args.mode, seed, path, strategy)
    acts = layer_activations(net, split.train, args.layer,
                             instance_cap=strategy.dpp.instance_cap, seed=seed)
    print_json({
        "csv": str(path),
        "neurons": neurons,
        "mean_similarity": (mean_pairwise_similarity(acts, neurons, strategy.dpp.beta)
                            if len(neurons) > 1 else None),
    })
    return 0

"""``eval``: classification errors of a saved model on a config's dataset."""

from argparse import Namespace

from commands.common import add_config_argument, print_json
from schemas.config import load_spec
from services.dataio import load_split
from services.mlp import classification_error, load_model


def register(subparsers) -> None:
    parser = subparsers.add_parser("eval", help="Evaluate a saved model.")
    add_config_argument(parser)
    parser.add_argument("--model", required=True, help="Model file.")
    parser.set_defaults(handler=handle)


def handle(args: Namespace) -> int:
    spec = load_spec(args.config)
    net = load_model(args.model)
    split = load_split(spec.dataset)
    print_json({
        "model": args.model,
        "layer_sizes": net.layer_sizes,
        "train_error": classification_error(net, split.train),
        "test_error": classification_error(net, split.test),
    })
    return 0

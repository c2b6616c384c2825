"""``beta-sweep`` and ``dpp-size-sweep``."""

from argparse import Namespace
from pathlib import Path

from commands.common import add_config_argument, add_override_arguments, load_experiment, print_json
from services.experiment import beta_sweep, dpp_size_sweep


def register(subparsers) -> None:
    parser = subparsers.add_parser("beta-sweep", help="Train error and DPP size against beta.")
    add_config_argument(parser)
    add_override_arguments(parser)
    parser.add_argument("--betas", type=float, nargs="+", help="Override the config's betas.")
    parser.set_defaults(handler=handle_beta)

    parser = subparsers.add_parser("dpp-size-sweep", help="Expected DPP size per hidden layer.")
    add_config_argument(parser)
    add_override_arguments(parser)
    parser.add_argument("--betas", type=float, nargs="+", help="Override the config's betas.")
    parser.set_defaults(handler=handle_size)


def handle_beta(args: Namespace) -> int:
    spec = load_experiment(args)
    frame = beta_sweep(spec, args.betas)
    print_json({"rows": len(frame), "csv": str(Path(spec.output_dir) / "beta_sweep.csv")})
    return 0


def handle_size(args: Namespace) -> int:
    spec = load_experiment(args)
    frame = dpp_size_sweep(spec, args.betas)
    print_json({"rows": len(frame), "csv": str(Path(spec.output_dir) / "dpp_size_sweep.csv")})
    return 0

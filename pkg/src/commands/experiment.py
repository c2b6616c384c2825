"""``experiment``: run a declarative pruning sweep."""

from argparse import Namespace
from pathlib import Path

from commands.common import add_config_argument, add_override_arguments, load_experiment, print_json
from services.experiment import run_experiment


def register(subparsers) -> None:
    parser = subparsers.add_parser("experiment", help="Run a strategy x fraction x seed sweep.")
    add_config_argument(parser)
    add_override_arguments(parser)
    parser.set_defaults(handler=handle)


def handle(args: Namespace) -> int:
    spec = load_experiment(args)
    records = run_experiment(spec)
    print_json({
        "experiment": spec.name,
        "records": len(records),
        "failed": sum(r.failed for r in records),
        "metrics": str(Path(spec.output_dir) / "metrics.csv"),
    })
    return 0

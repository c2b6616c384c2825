"""
Helpers shared by the subcommands: config loading with flag overrides and
JSON output on stdout.
"""

import json
import sys
from argparse import ArgumentParser, Namespace
from typing import Any, Dict

from pydantic import ValidationError

from schemas.config import ExperimentSpec, load_spec
from utils.errors import ConfigError


def add_config_argument(parser: ArgumentParser, required: bool = True) -> None:
    parser.add_argument("--config", "--spec", dest="config", required=required,
                        help="JSON experiment config (version 1).")


def add_override_arguments(parser: ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, help="Override the base seed.")
    parser.add_argument("--out", help="Override the output directory.")
    parser.add_argument("--repetitions", type=int, help="Override the number of repetitions.")
    parser.add_argument("--workers", type=int, help="Override the number of worker processes.")


def apply_overrides(spec: ExperimentSpec, updates: Dict[str, Any]) -> ExperimentSpec:
    """Re-validate ``spec`` with ``updates`` applied."""
    if not updates:
        return spec
    try:
        return ExperimentSpec.model_validate({**spec.model_dump(), **updates})
    except ValidationError as exc:
        raise ConfigError(f"invalid override: {exc}") from exc


def load_experiment(args: Namespace) -> ExperimentSpec:
    """Load ``args.config`` and apply whichever override flags were given."""
    spec = load_spec(args.config)
    flags = {"seed": "base_seed", "out": "output_dir", "repetitions": "repetitions", "workers": "workers"}
    updates = {}
    for flag, field in flags.items():
        value = getattr(args, flag, None)
        if value is not None:
            updates[field] = value
    return apply_overrides(spec, updates)


def print_json(payload: Dict[str, Any]) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")

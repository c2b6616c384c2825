"""
Command-line entry point of the DivNet toolkit.

Builds the argument parser from the subcommand modules, configures logging and
maps exceptions to exit codes: usage and configuration problems exit with 2,
every other failure with 1. Failures are reported on stderr as one JSON line
``{"error": <type>, "message": <text>}``.
"""

import argparse
import json
import sys
from typing import List, Optional

from pydantic import ValidationError

from commands import evaluate, experiment, heatmap, prune, sweeps, train
from utils.errors import ConfigError, DivNetError, UsageError
from utils.logging_config import configure_logging, get_logger
from utils.settings import get_settings

logger = get_logger(__name__)  # pylint: disable=invalid-name

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

COMMANDS = (train, prune, evaluate, experiment, heatmap, sweeps)


class CliParser(argparse.ArgumentParser):
    """Argument parser raising instead of exiting on bad input."""

    def error(self, message):
        raise UsageError(message)


def build_parser() -> CliParser:
    parser = CliParser(prog="divnet", description="Diversity-based neuron pruning toolkit.")
    parser.add_argument("--log-level", help="Log level (default from DIVNET_LOG_LEVEL).")
    parser.add_argument("--log-file", help="Rotating log file (default from DIVNET_LOG_FILE).")
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    subparsers.required = True
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def _report(exc: BaseException) -> None:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one subcommand.

    Args:
        argv (list, optional): Arguments without the program name; defaults to ``sys.argv[1:]``.

    Returns:
        int: Exit code.
    """
    try:
        args = build_parser().parse_args(argv)
        settings = get_settings()
        configure_logging(args.log_level or settings.log_level, args.log_file or settings.log_file)
        return args.handler(args)
    except (ConfigError, ValidationError, FileNotFoundError) as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        _report(exc)
        return EXIT_USAGE
    except DivNetError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        _report(exc)
        return EXIT_RUNTIME
    except Exception as exc:  # pylint: disable=broad-except
        logger.exception("Unexpected error: %s", exc)
        _report(exc)
        return EXIT_RUNTIME


def run() -> None:
    """Console script entry point."""
    sys.exit(main())


if __name__ == "__main__":
    run()

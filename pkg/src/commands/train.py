"""
``train``: train one network from a config and write the model file and its
epoch log.
"""

from argparse import Namespace
from pathlib import Path

import pandas as pd

from commands.common import add_config_argument, apply_overrides, print_json
from schemas.config import load_spec
from services.dataio import load_split
from services.mlp import NetworkParams, classification_error, save_model, train
from utils.logging_config import get_logger

logger = get_logger(__name__)  # pylint: disable=invalid-name


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="Train a network.")
    add_config_argument(parser)
    parser.add_argument("--seed", type=int, help="Override the training seed.")
    parser.add_argument("--out", help="Override the output directory.")
    parser.set_defaults(handler=handle)


def handle(args: Namespace) -> int:
    spec = load_spec(args.config)
    updates = {}
    if args.seed is not None:
        updates["train"] = {**spec.train.model_dump(), "seed": args.seed}
    if args.out is not None:
        updates["output_dir"] = args.out
    spec = apply_overrides(spec, updates)

    split = load_split(spec.dataset)
    initial = NetworkParams.initialize(spec.architecture, spec.train.seed)
    result = train(initial, split.train, spec.train)

    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model_path = out / "model.npz"
    save_model(result.params, model_path, train_config=spec.train, seed=spec.train.seed,
               train_seconds=result.seconds)
    pd.DataFrame([e.model_dump() for e in result.epochs]).to_csv(out / "epochs.csv", index=False)
    logger.info("Wrote %s and %s", model_path, out / "epochs.csv")
    print_json({
        "model": str(model_path),
        "epochs": len(result.epochs),
        "train_error": result.final_train_error,
        "test_error": classification_error(result.params, split.test),
        "seconds": round(result.seconds, 3),
    })
    return 0

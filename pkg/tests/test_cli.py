"""Tests for the command-line entry point."""

import json
from pathlib import Path

import pandas as pd
import pytest

from main import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from services.mlp import NetworkParams, save_model
from utils.errors import TrainingError

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def config(tmp_path):
    payload = {
        "version": 1,
        "name": "cli",
        "dataset": {"kind": "blobs", "class_count": 3, "features": 8, "per_class": 30, "spread": 0.05},
        "architecture": [8, 12, 3],
        "train": {"learning_rate": 0.5, "batch_size": 15, "error_threshold": 0.05, "max_epochs": 60},
        "strategies": [{"kind": "random"}, {"kind": "dpp", "reweight": True}],
        "prune_fractions": [0.5, 1.0],
        "repetitions": 1,
        "output_dir": str(tmp_path / "out"),
        "cache_models": False,
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def last_json(text):
    return json.loads(text.strip().splitlines()[-1])


class TestExitCodes:

    def test_unknown_flag(self, capsys):
        assert main(["train", "--bogus"]) == EXIT_USAGE
        assert last_json(capsys.readouterr().err)["error"] == "UsageError"

    def test_missing_subcommand(self):
        assert main([]) == EXIT_USAGE

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["train", "--config", str(tmp_path / "absent.json")]) == EXIT_USAGE
        assert last_json(capsys.readouterr().err)["error"] == "FileNotFoundError"

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{", encoding="utf-8")
        assert main(["experiment", "--config", str(path)]) == EXIT_USAGE

    def test_unknown_key(self, tmp_path, config):
        payload = json.loads(config.read_text())
        payload["colour"] = "blue"
        config.write_text(json.dumps(payload))
        assert main(["experiment", "--config", str(config)]) == EXIT_USAGE

    def test_invalid_override(self, config):
        assert main(["experiment", "--config", str(config), "--repetitions", "0"]) == EXIT_USAGE

    def test_runtime_failure(self, config, monkeypatch, capsys):
        def diverge(*args, **kwargs):
            raise TrainingError("loss became non-finite", epoch=2)

        monkeypatch.setattr("commands.train.train", diverge)
        assert main(["train", "--config", str(config)]) == EXIT_RUNTIME
        report = last_json(capsys.readouterr().err)
        assert report["error"] == "TrainingError"
        assert "epoch 2" in report["message"]


class TestWorkflow:

    def test_train_prune_eval(self, tmp_path, config, capsys):
        assert main(["train", "--config", str(config), "--seed", "4"]) == EXIT_OK
        trained = last_json(capsys.readouterr().out)
        model = trained["model"]
        assert Path(model).is_file()
        assert (tmp_path / "out" / "epochs.csv").is_file()

        assert main(["prune", "--config", str(config), "--model", model, "--keep", "0.5",
                     "--reweight", "--seed", "1"]) == EXIT_OK
        pruned = last_json(capsys.readouterr().out)
        assert pruned["layer_sizes"] == [8, 6, 3]
        decision_file = pruned["decisions"][0]
        assert json.loads(Path(decision_file).read_text())["strategy"] == "divnet"

        assert main(["eval", "--config", str(config), "--model", pruned["model"]]) == EXIT_OK
        evaluated = last_json(capsys.readouterr().out)
        assert evaluated["test_error"] == pruned["test_error"]

        replay_dir = tmp_path / "replay"
        assert main(["prune", "--config", str(config), "--model", model, "--decision", decision_file,
                     "--reweight", "--out", str(replay_dir)]) == EXIT_OK
        replayed = last_json(capsys.readouterr().out)
        assert replayed["test_error"] == pruned["test_error"]

    def test_prune_needs_keep(self, tmp_path, config, capsys):
        assert main(["train", "--config", str(config)]) == EXIT_OK
        model = last_json(capsys.readouterr().out)["model"]
        assert main(["prune", "--config", str(config), "--model", model]) == EXIT_USAGE

    @pytest.mark.parametrize("strategy", ["random", "dpp"])
    def test_prune_from_flags_alone(self, tmp_path, capsys, strategy):
        model = tmp_path / "models" / "model.npz"
        model.parent.mkdir()
        save_model(NetworkParams.initialize([20, 12, 10], seed=2), model)
        assert main(["prune", "--dataset", "blobs", "--model", str(model), "--strategy", strategy,
                     "--keep", "0.5", "--reweight"]) == EXIT_OK
        pruned = last_json(capsys.readouterr().out)
        assert pruned["layer_sizes"] == [20, 6, 10]
        assert Path(pruned["model"]).parent == model.parent
        assert (model.parent / "decision_layer1.json").is_file()

    def test_experiment(self, tmp_path, config, capsys):
        assert main(["experiment", "--config", str(config), "--out", str(tmp_path / "sweep")]) == EXIT_OK
        summary = last_json(capsys.readouterr().out)
        assert summary["records"] == 4 and summary["failed"] == 0
        metrics = pd.read_csv(tmp_path / "sweep" / "metrics.csv")
        assert list(metrics["strategy"].unique()) == ["random", "divnet"]

    def test_heatmap(self, tmp_path, config, capsys):
        assert main(["heatmap", "--config", str(config), "--k", "4", "--mode", "first"]) == EXIT_OK
        result = last_json(capsys.readouterr().out)
        assert result["neurons"] == [0, 1, 2, 3]
        assert Path(result["csv"]).is_file()

    def test_sweeps(self, tmp_path, config, capsys):
        assert main(["dpp-size-sweep", "--config", str(config), "--betas", "0.1", "1.0"]) == EXIT_OK
        assert last_json(capsys.readouterr().out)["rows"] == 2
        assert main(["beta-sweep", "--config", str(config), "--betas", "0.1"]) == EXIT_OK
        assert last_json(capsys.readouterr().out)["rows"] == 1


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.json")), ids=lambda p: p.stem)
def test_bundled_configs_validate(path):
    from schemas.config import load_spec

    spec = load_spec(path)
    assert spec.version == 1

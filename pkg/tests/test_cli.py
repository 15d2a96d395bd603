"""
Tests for the command-line entry point
"""
import json
import sys

import pandas as pd
import pytest
from loguru import logger

from src.core.config import TrainConfig, load_config
from src.main import EVAL_FILE, EXIT_FAILURE, EXIT_OK, EXIT_USAGE, PROFILE_FILE, RESOLVED_CONFIG, run
from src.services.oracle.suite import REPORT_FILE
from src.services.sbn.checkpoint import save_params

TRAIN_ARGS = [
    "--set", "architecture=4",
    "--set", "dataset=synthetic",
    "--set", "synthetic_images=200",
    "--set", "synthetic_dim=3",
    "--set", "synthetic_architecture=3",
    "--set", "batch_size=20",
    "--set", "validation_interval=4",
    "--set", "test_samples=5",
    "--set", "profile_images=4",
    "--set", "profile_samples_per_image=20",
    "--set", "profile_baseline_updates=2",
]


def last_json_line(text: str) -> dict:
    return json.loads(text.strip().splitlines()[-1])


class TestUsageErrors:
    """Test exit code 2 for bad invocations"""

    def test_unknown_flag(self, tmp_path):
        """Test an unknown flag is a usage error"""
        assert run(["train", "--bogus", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_missing_command(self):
        """Test running without a command"""
        assert run([]) == EXIT_USAGE

    def test_bad_config(self, tmp_path, capsys):
        """Test an unknown config key is reported as one JSON line"""
        path = tmp_path / "bad.cfg"
        path.write_text("unknown_key = 1\n")
        assert run(["train", "--config", str(path), "--out", str(tmp_path)]) == EXIT_USAGE
        error = last_json_line(capsys.readouterr().err)
        assert error["error"] == "ConfigError"

    def test_malformed_override(self, tmp_path):
        """Test an override without '='"""
        assert run(["train", "--set", "seed", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_eval_needs_checkpoint(self, tmp_path, capsys):
        """Test eval without a checkpoint names the missing key"""
        assert run(["eval", *TRAIN_ARGS, "--out", str(tmp_path)]) == EXIT_USAGE
        assert "checkpoint" in last_json_line(capsys.readouterr().err)["message"]

    @pytest.mark.parametrize("value", ["", "marginalized,reinforce"])
    def test_bad_profile_estimators(self, tmp_path, capsys, value):
        """Test an empty or unknown estimator list fails before profiling"""
        code = run(["profile-variance", *TRAIN_ARGS, "--set", f"profile_estimators={value}", "--out", str(tmp_path)])
        assert code == EXIT_USAGE
        assert last_json_line(capsys.readouterr().err)["error"] == "ConfigError"


class TestCommands:
    """Test each command on tiny inputs"""

    def test_verify(self, tmp_path, capsys):
        """Test verify writes its report and the resolved config"""
        args = ["verify", "--set", "models=1", "--set", "max_units=3", "--set", "data_size=2",
                "--set", "trials=2000", "--set", "lemma_tables=5", "--out", str(tmp_path)]
        code = run(args)
        summary = last_json_line(capsys.readouterr().out)
        assert code == (EXIT_OK if summary["failed"] == 0 else EXIT_FAILURE)
        assert (tmp_path / REPORT_FILE).exists()
        assert (tmp_path / RESOLVED_CONFIG).exists()

    def test_train_then_eval_and_profile(self, tmp_path, capsys):
        """Test the train, eval and profile-variance chain on one run directory"""
        train_dir = tmp_path / "train"
        assert run(["train", *TRAIN_ARGS, "--seed", "3", "--out", str(train_dir)]) == EXIT_OK
        report = last_json_line(capsys.readouterr().out)
        assert report["estimator"] == "marginalized"

        resolved = load_config(TrainConfig, train_dir / RESOLVED_CONFIG)
        assert resolved.seed == 3
        assert resolved.dataset == "synthetic"

        eval_dir = tmp_path / "eval"
        assert run(["eval", *TRAIN_ARGS, "--set", f"checkpoint={train_dir}", "--out", str(eval_dir)]) == EXIT_OK
        result = json.loads((eval_dir / EVAL_FILE).read_text())
        assert result["step"] == report["best_step"]
        assert result["images"] == 20
        assert result["test_bound"] > 0

        profile_dir = tmp_path / "profile"
        assert run(["profile-variance", *TRAIN_ARGS, "--set", f"checkpoint={train_dir}", "--out", str(profile_dir)]) == EXIT_OK
        frame = pd.read_csv(profile_dir / PROFILE_FILE)
        assert set(frame["estimator"]) == {"marginalized", "lr"}
        assert list(frame["layer"].unique()) == ["h1"]

    def test_missing_checkpoint_is_runtime_error(self, tmp_path):
        """Test a checkpoint path that does not exist"""
        code = run(["eval", *TRAIN_ARGS, "--set", f"checkpoint={tmp_path / 'none'}", "--out", str(tmp_path)])
        assert code == EXIT_FAILURE

    def test_single_model_checkpoint_is_runtime_error(self, tmp_path, capsys, two_layer_pair):
        """Test eval on a checkpoint without a (gen, rec) pair"""
        path = save_params(tmp_path / "gen.npz", two_layer_pair[0])
        code = run(["eval", *TRAIN_ARGS, "--set", f"checkpoint={path}", "--out", str(tmp_path / "eval")])
        assert code == EXIT_FAILURE
        assert last_json_line(capsys.readouterr().err)["error"] == "CheckpointFormatError"


@pytest.fixture(autouse=True)
def restore_logging():
    """Drop the sinks a command installs."""
    yield
    logger.remove()
    logger.add(sys.stderr)

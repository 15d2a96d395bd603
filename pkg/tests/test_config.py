"""
Tests for flat config files and the experiment schemas
"""
from pathlib import Path

import pytest

from src.core.config import (
    TrainConfig,
    VerifyConfig,
    dump_config,
    load_config,
    parse_architecture,
    parse_flat,
    parse_overrides,
)
from src.core.errors import ConfigError

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


class TestParsing:
    """Test the flat key = value format"""

    def test_parse_flat(self):
        """Test comments, blank lines and spacing"""
        text = "# comment\narchitecture = 200-200  # trailing\n\nestimator=lr\n"
        assert parse_flat(text) == {"architecture": "200-200", "estimator": "lr"}

    @pytest.mark.parametrize("text", ["architecture 200", "= 3", "seed = 1\nseed = 2"])
    def test_malformed(self, text):
        """Test lines without a key or value and duplicate keys"""
        with pytest.raises(ConfigError):
            parse_flat(text)

    def test_overrides(self):
        """Test --set pairs are stripped"""
        assert parse_overrides(["seed=3", " estimator = lr "]) == {"seed": "3", "estimator": "lr"}
        with pytest.raises(ConfigError):
            parse_overrides(["seed"])

    def test_architecture(self):
        """Test unit counts are parsed deepest layer first"""
        assert parse_architecture("200-100-50") == [200, 100, 50]
        for text in ("", "200-", "a-b", "0-3"):
            with pytest.raises(ConfigError):
                parse_architecture(text)


class TestSchemas:
    """Test strict validation and the resolved dump"""

    def test_defaults(self):
        """Test the defaults"""
        config = load_config(TrainConfig)
        assert config.estimator == "marginalized"
        assert config.latent_sizes == [200, 200]
        assert config.profile_estimator_ids == ["marginalized", "lr"]

    def test_overrides_win(self, tmp_path):
        """Test overrides take precedence over the file"""
        path = tmp_path / "run.cfg"
        path.write_text("estimator = lr\nbatch_size = 10\n")
        config = load_config(TrainConfig, path, {"batch_size": "25"})
        assert config.estimator == "lr"
        assert config.batch_size == 25

    @pytest.mark.parametrize("overrides", [
        {"unknown_key": "1"},
        {"estimator": "reinforce"},
        {"batch_size": "0"},
        {"architecture": "10-x"},
        {"learning_rate": "fast"},
        {"profile_estimators": ""},
        {"profile_estimators": "marginalized,reinforce"},
    ])
    def test_rejects_invalid(self, overrides):
        """Test invalid values raise ConfigError"""
        with pytest.raises(ConfigError):
            load_config(TrainConfig, None, overrides)

    def test_verify_trial_floor(self):
        """Test the minimum trial count"""
        with pytest.raises(ConfigError):
            load_config(VerifyConfig, None, {"trials": "999"})

    def test_missing_file(self, tmp_path):
        """Test a missing config file"""
        with pytest.raises(ConfigError):
            load_config(TrainConfig, tmp_path / "missing.cfg")

    def test_dump_round_trip(self, tmp_path):
        """Test the resolved dump reloads to the same config"""
        config = load_config(TrainConfig, None, {"estimator": "lr", "include_direct_term": "true", "weight_decay": "0.0005"})
        path = tmp_path / "resolved.cfg"
        path.write_text(dump_config(config))
        assert load_config(TrainConfig, path) == config

    @pytest.mark.parametrize("name,schema", [
        ("small.cfg", VerifyConfig),
        ("sbn.cfg", TrainConfig),
        ("desk.cfg", TrainConfig),
        ("sbn4.cfg", TrainConfig),
    ])
    def test_shipped_configs(self, name, schema):
        """Test every shipped config loads"""
        load_config(schema, CONFIG_DIR / name)

    def test_four_layer_config(self):
        """Test the four-layer config lists its deepest layer first"""
        config = load_config(TrainConfig, CONFIG_DIR / "sbn4.cfg")
        assert config.latent_sizes == [32, 64, 128, 256]
        assert config.profile_estimator_ids == ["marginalized", "lr"]

    def test_desk_config_checkpoints_mid_training(self):
        """Test the desk run validates at its halfway step"""
        config = load_config(TrainConfig, CONFIG_DIR / "desk.cfg")
        assert (config.max_updates // 2) % config.validation_interval == 0

"""Tests for coldstart_lab.config module."""

from __future__ import annotations

import json

import pytest

from coldstart_lab.config import RunConfig, load_config, parse_config_text, parse_override_args
from coldstart_lab.errors import ConfigError


class TestRunConfig:
    """Defaults, validation and serialisation."""

    def test_defaults(self):
        """Defaults follow the documented hyper-parameters."""
        cfg = RunConfig()
        assert cfg.seed == 42
        assert cfg.rating_threshold == 3.0
        assert (cfg.min_inter, cfg.max_inter) == (13, 100)
        assert cfg.n_layers == 3
        assert cfg.n_clusters == 40
        assert (cfg.blend_alpha, cfg.edge_threshold) == (0.8, 0.8)
        assert cfg.order == "first_order"
        assert cfg.checkpoint_precision == 32

    def test_out_of_range_rejected(self):
        """Range checks run at construction."""
        with pytest.raises(ConfigError):
            RunConfig(n_layers=5)
        with pytest.raises(ConfigError):
            RunConfig(split_ratio=1.0)
        with pytest.raises(ConfigError):
            RunConfig(edge_threshold=0.0)

    def test_enum_rejected(self):
        with pytest.raises(ConfigError, match="order"):
            RunConfig(order="third_order")

    def test_min_above_max_rejected(self):
        with pytest.raises(ConfigError, match="min_inter"):
            RunConfig(min_inter=50, max_inter=20)

    def test_to_json_roundtrip(self):
        """Serialised config holds every field."""
        cfg = RunConfig(seed=7)
        data = json.loads(cfg.to_json())
        assert data["seed"] == 7
        assert RunConfig(**data) == cfg

    def test_config_error_is_value_error(self):
        """Callers may catch the builtin base."""
        with pytest.raises(ValueError):
            RunConfig(tau=0.0)


class TestOverrides:
    """String overrides from files and command lines."""

    def test_coercion(self):
        cfg = RunConfig().with_overrides({"epochs": "3", "tau": "0.5", "reg_biases": "false", "augment": "graph"})
        assert cfg.epochs == 3
        assert cfg.tau == 0.5
        assert cfg.reg_biases is False
        assert cfg.augment == "graph"

    def test_dashes_equal_underscores(self):
        """--reg-biases and reg_biases name the same field."""
        cfg = RunConfig().with_overrides({"--reg-biases": "no"})
        assert cfg.reg_biases is False

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            RunConfig().with_overrides({"learning_rate": "1"})

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="cannot parse"):
            RunConfig().with_overrides({"epochs": "many"})

    def test_parse_override_args(self):
        """Both --key=value and --key value forms; a bare flag means true."""
        args = ["--epochs=3", "--tau", "0.5", "--finetune-ae"]
        assert parse_override_args(args) == {"epochs": "3", "tau": "0.5", "finetune-ae": "true"}

    def test_parse_override_args_rejects_positional(self):
        with pytest.raises(ConfigError):
            parse_override_args(["epochs=3"])


class TestConfigFile:
    """Flat key = value files."""

    def test_parse_text_skips_comments(self):
        text = "# run\nseed = 5\n\nepochs = 2  # short\n"
        assert parse_config_text(text) == {"seed": "5", "epochs": "2"}

    def test_parse_text_rejects_garbage(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config_text("not a pair")

    def test_load_config_with_overrides(self, tmp_path):
        """Command-line overrides win over the file."""
        path = tmp_path / "run.cfg"
        path.write_text("seed = 5\nepochs = 2\n")
        cfg = load_config(path, {"epochs": "4"})
        assert cfg.seed == 5
        assert cfg.epochs == 4

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "absent.cfg")

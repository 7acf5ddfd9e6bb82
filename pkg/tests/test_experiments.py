"""Tests for coldstart_lab.experiments module."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from coldstart_lab.config import RunConfig
from coldstart_lab.errors import ConfigError
from coldstart_lab.experiments import (
    BASELINE,
    PRESETS,
    ExperimentResult,
    VariantResult,
    run_experiment,
    variants_for,
)


def _result():
    return ExperimentResult("alignment", [0, 1, 2], [
        VariantResult("tmag-k1", recall=[0.10, 0.20, 0.30], ndcg=[0.1, 0.1, 0.1]),
        VariantResult("tmag-k4", recall=[0.20, 0.20, 0.40], ndcg=[0.2, 0.2, 0.2]),
        VariantResult(BASELINE, recall=[0.05, 0.20, 0.10], ndcg=[0.0, 0.1, 0.0]),
    ])


class TestPresets:
    """Variant lists per preset."""

    def test_all_presets_build(self):
        cfg = RunConfig()
        for preset in PRESETS:
            variants = variants_for(preset, cfg)
            assert len(variants) >= 2
            assert len({v.name for v in variants}) == len(variants)

    def test_alignment_includes_baseline(self):
        variants = variants_for("alignment", RunConfig(synth_clusters=4))
        assert [v.name for v in variants] == ["tmag-k1", "tmag-k4", BASELINE]
        assert variants[-1].runner == BASELINE

    def test_alignment_single_cluster(self):
        names = [v.name for v in variants_for("alignment", RunConfig(synth_clusters=1))]
        assert names == ["tmag-k1", BASELINE]

    def test_alpha_grid(self):
        alphas = [v.overrides["blend_alpha"] for v in variants_for("alpha", RunConfig())]
        assert alphas == [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]

    def test_contrastive_trains_encoder(self):
        for variant in variants_for("contrastive", RunConfig()):
            assert variant.overrides["finetune_ae"] is True

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="unknown experiment"):
            variants_for("nope", RunConfig())


class TestExperimentResult:
    """Comparisons across seeds."""

    def test_wins_ignore_ties(self):
        assert _result().wins() == {"tmag-k1": 0, "tmag-k4": 2, BASELINE: 0}

    def test_margin(self):
        assert _result().margin("tmag-k4", "tmag-k1") == pytest.approx(0.2 / 3)

    def test_seeds_at_least(self):
        result = _result()
        assert result.seeds_at_least("tmag-k4", "tmag-k1") == 3
        assert result.seeds_at_least(BASELINE, "tmag-k1") == 1

    def test_get_unknown(self):
        with pytest.raises(KeyError):
            _result().get("missing")

    def test_records(self):
        records = _result().to_records()
        assert [r["variant"] for r in records] == ["tmag-k1", "tmag-k4", BASELINE]
        assert records[1]["wins"] == 2
        assert records[0]["mean_recall"] == pytest.approx(0.2)


class TestRunExperiment:
    def test_toy_autoencoder_preset(self, small_config):
        """Both arms run end to end on generated data and land in results.jsonl."""
        cfg = small_config.with_overrides({"interactions_path": "", "epochs": "1"})
        result = run_experiment("autoencoder", cfg, seeds=[4])
        assert [v.name for v in result.variants] == ["cluster-raw", "cluster-latent"]
        assert all(v.n == 1 for v in result.variants)
        for v in result.variants:
            assert 0.0 <= v.mean_recall <= 1.0
        lines = (Path(cfg.workdir) / "autoencoder" / "results.jsonl").read_text().splitlines()
        assert "config" in json.loads(lines[0])
        assert {json.loads(line)["variant"] for line in lines[1:]} == {"cluster-raw", "cluster-latent"}

"""Ablation and sensitivity presets run across seeds, compared on Task1 metrics."""

from __future__ import annotations

import json
import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from coldstart_lab import pipeline, synth
from coldstart_lab.config import RunConfig
from coldstart_lab.errors import ConfigError
from coldstart_lab.evaluator import MetricReport

logger = logging.getLogger(__name__)

BASELINE = "baseline"


@dataclass(frozen=True)
class Variant:
    """One arm of an experiment: config overrides on top of the base run."""

    name: str
    overrides: dict[str, object] = field(default_factory=dict)
    runner: str = "tmag"


@dataclass
class VariantResult:
    """Task1 metrics of one variant, one entry per seed."""

    name: str
    recall: list[float] = field(default_factory=list)
    ndcg: list[float] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.recall)

    @property
    def mean_recall(self) -> float:
        return float(np.mean(self.recall)) if self.recall else 0.0

    @property
    def mean_ndcg(self) -> float:
        return float(np.mean(self.ndcg)) if self.ndcg else 0.0

    @property
    def std_recall(self) -> float:
        return float(np.std(self.recall)) if self.recall else 0.0


@dataclass
class ExperimentResult:
    preset: str
    seeds: list[int]
    variants: list[VariantResult]

    def get(self, name: str) -> VariantResult:
        for v in self.variants:
            if v.name == name:
                return v
        raise KeyError(name)

    def wins(self) -> dict[str, int]:
        """Seeds on which each variant had the strictly highest Task1 recall."""
        counts = {v.name: 0 for v in self.variants}
        for s in range(len(self.seeds)):
            scores = [v.recall[s] for v in self.variants]
            best = max(scores)
            leaders = [v.name for v, score in zip(self.variants, scores) if score == best]
            if len(leaders) == 1:
                counts[leaders[0]] += 1
        return counts

    def margin(self, name_a: str, name_b: str) -> float:
        """Mean Task1 recall of ``name_a`` minus that of ``name_b``."""
        return self.get(name_a).mean_recall - self.get(name_b).mean_recall

    def seeds_at_least(self, name_a: str, name_b: str) -> int:
        """Number of seeds where ``name_a`` reached at least the recall of ``name_b``."""
        a, b = self.get(name_a), self.get(name_b)
        return sum(ra >= rb for ra, rb in zip(a.recall, b.recall))

    def to_records(self) -> list[dict]:
        wins = self.wins()
        return [{"preset": self.preset, "variant": v.name, "seeds": self.seeds, "recall": v.recall,
                 "ndcg": v.ndcg, "mean_recall": v.mean_recall, "mean_ndcg": v.mean_ndcg, "wins": wins[v.name]}
                for v in self.variants]


# --- presets --------------------------------------------------------------------


def _alignment(cfg: RunConfig) -> list[Variant]:
    k = cfg.synth_clusters if not cfg.interactions_path else cfg.n_clusters
    variants = [Variant("tmag-k1", {"n_clusters": 1})]
    if k != 1:
        variants.append(Variant(f"tmag-k{k}", {"n_clusters": k}))
    return [*variants, Variant(BASELINE, runner=BASELINE)]


def _augmentation(cfg: RunConfig) -> list[Variant]:
    return [Variant(f"augment-{mode}", {"augment": mode, "drop_fraction": 0.3})
            for mode in ("none", "graph", "attribute", "both")]


def _sparsity(cfg: RunConfig) -> list[Variant]:
    return [Variant(f"support-{n}", {"support_size": n}) for n in (5, 15, 30)]


def _clusters(cfg: RunConfig) -> list[Variant]:
    return [Variant(f"k{k}", {"n_clusters": k}) for k in (1, 10, 20, 30, 40, 50)]


def _alpha(cfg: RunConfig) -> list[Variant]:
    return [Variant(f"alpha-{a:.1f}", {"blend_alpha": a}) for a in np.round(np.linspace(0.0, 1.0, 6), 1).tolist()]


def _threshold(cfg: RunConfig) -> list[Variant]:
    return [Variant(f"t-{t:.1f}", {"edge_threshold": t}) for t in (0.5, 0.6, 0.7, 0.8, 0.9)]


def _contrastive(cfg: RunConfig) -> list[Variant]:
    # the encoder is the only path from the contrastive term to trainable parameters
    return [Variant("mi-off", {"lambda_mi": 0.0, "finetune_ae": True}),
            Variant("mi-on", {"lambda_mi": cfg.lambda_mi, "finetune_ae": True})]


def _autoencoder(cfg: RunConfig) -> list[Variant]:
    return [Variant("cluster-raw", {"cluster_on": "raw"}), Variant("cluster-latent", {"cluster_on": "latent"})]


PRESETS: dict[str, Callable[[RunConfig], list[Variant]]] = {
    "alignment": _alignment,
    "augmentation": _augmentation,
    "sparsity": _sparsity,
    "clusters": _clusters,
    "alpha": _alpha,
    "threshold": _threshold,
    "contrastive": _contrastive,
    "autoencoder": _autoencoder,
}


def variants_for(preset: str, cfg: RunConfig) -> list[Variant]:
    try:
        return PRESETS[preset](cfg)
    except KeyError:
        raise ConfigError(f"unknown experiment {preset!r}; choose from {', '.join(PRESETS)}") from None


# --- running --------------------------------------------------------------------


def seed_config(cfg: RunConfig, seed: int, root: Path) -> RunConfig:
    """Base config for one seed, generating the synthetic dataset when no interactions are given."""
    cfg = cfg.replace(seed=seed)
    if cfg.interactions_path:
        return cfg
    data = synth.generate(root / f"seed{seed}" / "synth", cfg.synth_users, cfg.synth_items, cfg.synth_clusters,
                          cfg.synth_in_block, seed)
    return cfg.with_overrides(data.overrides())


def run_variant(cfg: RunConfig, variant: Variant) -> MetricReport:
    """Run the pipeline for one variant and return its Task1 report."""
    cfg = cfg.replace(**variant.overrides)
    summary = pipeline.ingest(cfg)
    if variant.runner == BASELINE:
        return pipeline.baseline(cfg)[0]
    if cfg.n_clusters > summary["train_users"]:
        logger.warning("%s: n_clusters=%d capped at %d training users", variant.name, cfg.n_clusters,
                       summary["train_users"])
        cfg = cfg.replace(n_clusters=summary["train_users"])
    pipeline.pretrain_ae(cfg)
    pipeline.cluster(cfg)
    pipeline.meta_train_stage(cfg)
    return pipeline.meta_test(cfg)[0]


def run_experiment(preset: str, cfg: RunConfig, seeds: list[int] | None = None) -> ExperimentResult:
    """Run every variant of ``preset`` once per seed under ``cfg.workdir/<preset>/``."""
    seeds = list(seeds) if seeds else [cfg.seed]
    variants = variants_for(preset, cfg)
    root = Path(cfg.workdir) / preset
    results = {v.name: VariantResult(v.name) for v in variants}
    for seed in seeds:
        base = seed_config(cfg, seed, root)
        for variant in variants:
            run_cfg = base.replace(workdir=str(root / f"seed{seed}" / variant.name))
            report = run_variant(run_cfg, variant)
            results[variant.name].recall.append(report.recall)
            results[variant.name].ndcg.append(report.ndcg)
            logger.info("%s seed %d %s: recall@%d %.4f ndcg@%d %.4f", preset, seed, variant.name,
                        report.k, report.recall, report.k, report.ndcg)
    result = ExperimentResult(preset, seeds, [results[v.name] for v in variants])
    root.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps({"config": cfg.to_dict()}, sort_keys=True)]
    lines.extend(json.dumps(r, sort_keys=True) for r in result.to_records())
    (root / "results.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return result

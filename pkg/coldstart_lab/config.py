"""Run configuration: flat key = value files plus --key=value overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from coldstart_lab.errors import ConfigError


def _choice(*values: str) -> dict[str, Any]:
    return {"choices": values}


def _range(low: float | None = None, high: float | None = None, *, open_low: bool = False,
           open_high: bool = False) -> dict[str, Any]:
    return {"low": low, "high": high, "open_low": open_low, "open_high": open_high}


@dataclass(frozen=True)
class RunConfig:
    """Every hyper-parameter of the pipeline, with validated ranges in field metadata."""

    seed: int = field(default=42, metadata=_range(0))
    deterministic: bool = True
    workdir: str = "runs/default"

    # ingestion
    interactions_path: str = ""
    interactions_format: str = field(default="tsv", metadata=_choice("tsv", "movielens_dat"))
    user_attributes_path: str = ""
    item_attributes_path: str = ""
    item_release_path: str = ""
    rating_threshold: float = field(default=3.0, metadata=_range(1, 5))
    min_inter: int = field(default=13, metadata=_range(1))
    max_inter: int = field(default=100, metadata=_range(1))
    user_rule: str = field(default="first_rating_time", metadata=_choice("random", "first_rating_time"))
    item_rule: str = field(default="first_rated_time",
                           metadata=_choice("random", "release_year", "first_rated_time"))
    split_ratio: float = field(default=0.8, metadata=_range(0, 1, open_low=True, open_high=True))
    query_size: int = field(default=10, metadata=_range(1))
    validation_fraction: float = field(default=0.1, metadata=_range(0, 1, open_high=True))
    support_size: int = field(default=0, metadata=_range(0))
    drop_fraction: float = field(default=0.0, metadata=_range(0, 1, open_high=True))

    # autoencoder
    embedding_dim: int = field(default=64, metadata=_range(1))
    latent_dim: int = field(default=64, metadata=_range(1))
    ae_lambda: float = field(default=1e-4, metadata=_range(0))
    ae_lr: float = field(default=0.01, metadata=_range(0, open_low=True))
    ae_max_epochs: int = field(default=500, metadata=_range(0))
    ae_tol: float = field(default=1e-6, metadata=_range(0, open_low=True))
    reg_biases: bool = True

    # graph
    n_layers: int = field(default=3, metadata=_range(1, 4))
    layer_combine: str = field(default="last", metadata=_choice("last", "mean"))
    task_subgraph: bool = False

    # task generation
    n_clusters: int = field(default=40, metadata=_range(1, 50))
    kmeans_max_iters: int = field(default=300, metadata=_range(1))
    kmeans_n_init: int = field(default=10, metadata=_range(1))
    cluster_on: str = field(default="latent", metadata=_choice("latent", "raw"))

    # augmentation
    augment: str = field(default="both", metadata=_choice("both", "graph", "attribute", "none"))
    blend_alpha: float = field(default=0.8, metadata=_range(0, 1))
    edge_threshold: float = field(default=0.8, metadata=_range(0, 1, open_low=True, open_high=True))
    neg_per_pos: int = field(default=4, metadata=_range(1))
    augment_every: int = field(default=1, metadata=_range(1))
    augment_top_items: int = field(default=500, metadata=_range(1))

    # losses
    tau: float = field(default=0.2, metadata=_range(0, open_low=True))
    lambda_gen: float = field(default=0.1, metadata=_range(0))
    lambda_mi: float = field(default=0.1, metadata=_range(0))
    lambda_reg: float = field(default=0.01, metadata=_range(0))
    infonce_denominator: str = field(default="negatives", metadata=_choice("negatives", "with-positive"))
    gen_grad: str = field(default="full", metadata=_choice("full", "aug-only"))
    finetune_ae: bool = False
    contrastive_batch: int = field(default=512, metadata=_range(2))

    # meta-learning
    inner_lr: float = field(default=0.001, metadata=_range(0, open_low=True))
    outer_lr: float = field(default=0.001, metadata=_range(0, open_low=True))
    inner_steps: int = field(default=1, metadata=_range(0, 5))
    order: str = field(default="first_order", metadata=_choice("first_order", "second_order_hvp"))
    epochs: int = field(default=100, metadata=_range(0))
    patience: int = field(default=10, metadata=_range(1))
    batch_tasks: int = field(default=1, metadata=_range(1))
    hvp_eps: float = field(default=0.0, metadata=_range(0))

    # evaluation
    eval_k: int = field(default=10, metadata=_range(1))
    map_norm: str = field(default="min", metadata=_choice("min", "relevant"))

    # baseline
    mf_lr: float = field(default=0.05, metadata=_range(0, open_low=True))
    mf_epochs: int = field(default=50, metadata=_range(0))
    mf_finetune_steps: int = field(default=20, metadata=_range(0))
    mf_reg: float = field(default=1e-4, metadata=_range(0))

    # synthetic data
    synth_users: int = field(default=400, metadata=_range(1))
    synth_items: int = field(default=200, metadata=_range(1))
    synth_clusters: int = field(default=4, metadata=_range(1))
    synth_in_block: float = field(default=0.9, metadata=_range(0, 1))

    checkpoint_precision: int = field(default=32, metadata=_choice("32", "64"))

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Check every field against its range or enum."""
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            meta = f.metadata
            if "choices" in meta and str(value) not in meta["choices"]:
                raise ConfigError(f"{f.name}={value!r} not in {', '.join(meta['choices'])}")
            if "low" in meta:
                _check_range(f.name, value, meta)
        if self.min_inter > self.max_inter:
            raise ConfigError(f"min_inter={self.min_inter} exceeds max_inter={self.max_inter}")

    def replace(self, **changes: Any) -> RunConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def with_overrides(self, overrides: dict[str, str]) -> RunConfig:
        """Apply string overrides, coercing each to the field's type."""
        changes = {key: _coerce(key, raw) for key, raw in _normalize_keys(overrides).items()}
        return self.replace(**changes)


def _check_range(name: str, value: float, meta: dict[str, Any]) -> None:
    low, high = meta["low"], meta["high"]
    if low is not None and (value < low or (meta["open_low"] and value == low)):
        raise ConfigError(f"{name}={value} below allowed range")
    if high is not None and (value > high or (meta["open_high"] and value == high)):
        raise ConfigError(f"{name}={value} above allowed range")


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _normalize_keys(raw: dict[str, str]) -> dict[str, str]:
    out = {}
    for key, value in raw.items():
        name = key.strip().lstrip("-").replace("-", "_")
        if name not in _FIELDS:
            raise ConfigError(f"unknown config key: {key}")
        out[name] = value
    return out


def _coerce(name: str, raw: str) -> Any:
    kind = _FIELDS[name].type
    text = raw.strip()
    try:
        if kind == "bool":
            lowered = text.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"cannot parse {name}={raw!r} as {kind}") from None
    return text


def parse_config_text(text: str) -> dict[str, str]:
    """Parse flat `key = value` lines; `#` starts a comment."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = stripped.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def load_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Build a RunConfig from an optional file and command-line overrides."""
    values: dict[str, str] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        values.update(parse_config_text(p.read_text(encoding="utf-8")))
    values.update(overrides or {})
    return RunConfig().with_overrides(values)


def parse_override_args(args: list[str]) -> dict[str, str]:
    """Turn ['--a=1', '--b', '2'] into {'a': '1', 'b': '2'}."""
    overrides: dict[str, str] = {}
    i = 0
    while i < len(args):
        arg = args[i]
        if not arg.startswith("--"):
            raise ConfigError(f"unexpected argument {arg!r}; use --key=value")
        if "=" in arg:
            key, value = arg[2:].split("=", 1)
        elif i + 1 < len(args) and not args[i + 1].startswith("--"):
            key, value = arg[2:], args[i + 1]
            i += 1
        else:
            key, value = arg[2:], "true"
        overrides[key] = value
        i += 1
    return overrides

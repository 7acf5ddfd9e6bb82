"""Workspace artifacts and the stages behind each command."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from coldstart_lab.augment import AugmentConfig
from coldstart_lab.autoencoder import AutoencoderParams, ae_loss, encode, train_autoencoder
from coldstart_lab.baseline import MfParams, mf_finetune, mf_scorer, mf_train
from coldstart_lab.checkpoint import CheckpointContainer
from coldstart_lab.config import RunConfig
from coldstart_lab.dataset import (
    AttributeSchema,
    ImplicitMatrix,
    binarize,
    build_support_query,
    drop_interactions,
    eligible_users,
    encode_attributes,
    filter_users,
    holdout_validation,
    load_id_map,
    load_release_years,
    parse_interactions,
    read_attribute_records,
    save_id_map,
    split_cold_start,
    truncate_support,
    write_interactions,
)
from coldstart_lab.errors import DataError, MissingArtifactError
from coldstart_lab.evaluator import MetricReport, RankedList, evaluate_rankings, evaluate_users
from coldstart_lab.graph import build_graph
from coldstart_lab.metalearn import (
    MetaConfig,
    MetaContext,
    TrainingLog,
    ValidationSet,
    augment_graph,
    init_new_rows,
    meta_test_adapt,
    meta_train,
)
from coldstart_lab.model import LossWeights, ModelParams, ObjectiveOptions, TmagObjective
from coldstart_lab.taskgen import Clustering, assign_new_users, build_tasks, kmeans

logger = logging.getLogger(__name__)

TASKS = (1, 2, 3)


class Workspace:
    """Typed access to the artifacts under one working directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.data = self.root / "data"

    def path(self, name: str) -> Path:
        return self.root / name

    def require(self, name: str, command: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise MissingArtifactError(str(p), command)
        return p

    def write_lines(self, name: str, lines: list[str], cfg: RunConfig) -> Path:
        """Text artifact whose first line records the run configuration."""
        p = self.path(name)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text("\n".join([f"# config={cfg.to_json()}", *lines]) + "\n", encoding="utf-8")
        return p

    def write_jsonl(self, name: str, records: list[dict], cfg: RunConfig) -> Path:
        p = self.path(name)
        p.parent.mkdir(parents=True, exist_ok=True)
        lines = [json.dumps({"config": cfg.to_dict()}, sort_keys=True)]
        lines.extend(json.dumps(_jsonable(r), sort_keys=True) for r in records)
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return p

    def read_jsonl(self, name: str, command: str) -> list[dict]:
        text = self.require(name, command).read_text(encoding="utf-8")
        return [json.loads(line) for line in text.splitlines() if line.strip()]

    def read_table(self, name: str, columns: list[str], command: str) -> pd.DataFrame:
        path = self.require(name, command)
        try:
            return pd.read_csv(path, sep="\t", header=None, names=columns, comment="#")
        except pd.errors.EmptyDataError:
            return pd.DataFrame(columns=columns)

    def save_checkpoint(self, name: str, tensors: dict[str, np.ndarray], cfg: RunConfig) -> Path:
        container = CheckpointContainer(config=cfg.to_dict(), precision=cfg.checkpoint_precision)
        container.update(tensors)
        container.save(self.path(name))
        return self.path(name)

    def load_checkpoint(self, name: str, command: str) -> CheckpointContainer:
        return CheckpointContainer.load(self.require(name, command))

    def partition(self) -> dict[str, Any]:
        return json.loads(self.require("data/partition.json", "ingest").read_text(encoding="utf-8"))

    def split(self, name: str) -> ImplicitMatrix:
        meta = self.partition()
        frame = self.read_table(f"data/{name}.tsv", ["user", "item"], "ingest")
        return ImplicitMatrix.from_pairs(frame["user"].to_numpy(), frame["item"].to_numpy(),
                                         meta["n_users"], meta["n_items"])


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, list | tuple):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        value = float(value)
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def _write_split(ws: Workspace, name: str, m: ImplicitMatrix, cfg: RunConfig) -> None:
    users, items = m.pairs()
    ws.write_lines(f"data/{name}.tsv", [f"{u}\t{i}" for u, i in zip(users.tolist(), items.tolist())], cfg)


# --- ingest ---------------------------------------------------------------------


def _eligible_split(m: ImplicitMatrix, users, cfg: RunConfig, seed: int,
                    label: str) -> tuple[np.ndarray, ImplicitMatrix, ImplicitMatrix]:
    users = np.asarray(users, dtype=np.int64)
    kept = eligible_users(m, users, cfg.query_size)
    if kept.size < users.size:
        logger.warning("%s: %d of %d users have <= %d positives and are left out",
                       label, users.size - kept.size, users.size, cfg.query_size)
    support, query = build_support_query(m, kept, cfg.query_size, seed)
    return kept, support, query


def ingest(cfg: RunConfig) -> dict[str, Any]:
    """Parse, binarise, filter and partition the interactions; encode attributes."""
    if not cfg.interactions_path:
        raise DataError("interactions_path is not set")
    if not cfg.user_attributes_path or not cfg.item_attributes_path:
        raise DataError("user_attributes_path and item_attributes_path are required")
    ws = Workspace(cfg.workdir)
    log = parse_interactions(cfg.interactions_path, cfg.interactions_format)
    write_interactions(log, ws.path("data/interactions.tsv"))
    m = filter_users(binarize(log, cfg.rating_threshold), cfg.min_inter, cfg.max_inter)
    user_raw = log.user_ids[m.user_ids]
    item_raw = log.item_ids[m.item_ids]
    save_id_map(user_raw, ws.path("data/user_ids.tsv"))
    save_id_map(item_raw, ws.path("data/item_ids.tsv"))

    release = load_release_years(cfg.item_release_path) if cfg.item_release_path else None
    part = split_cold_start(log, m, cfg.user_rule, cfg.item_rule, cfg.split_ratio, cfg.seed, release)
    meta_train_m = drop_interactions(part.meta_train, cfg.drop_fraction, cfg.seed)

    train_pool, val_pool = holdout_validation(part.existing_users, cfg.validation_fraction, cfg.seed)
    train_users, meta_support, meta_query = _eligible_split(meta_train_m, train_pool, cfg, cfg.seed, "meta-train")
    if train_users.size == 0:
        raise DataError("no meta-training user has enough positives for a support/query split")
    val_users, val_support, val_query = _eligible_split(meta_train_m, val_pool, cfg, cfg.seed + 1, "validation")
    splits = {"meta_support": meta_support, "meta_query": meta_query,
              "val_support": val_support, "val_query": val_query}
    task_users = {}
    for k in TASKS:
        users, support, query = _eligible_split(part.task(k), part.task_users(k), cfg, cfg.seed + 1 + k, f"task {k}")
        splits[f"task{k}_support"] = truncate_support(support, cfg.support_size, cfg.seed + k)
        splits[f"task{k}_query"] = query
        task_users[str(k)] = users.tolist()
    for name, matrix in splits.items():
        _write_split(ws, name, matrix, cfg)

    meta = {
        "n_users": m.n_users, "n_items": m.n_items,
        "existing_users": part.existing_users.tolist(), "new_users": part.new_users.tolist(),
        "existing_items": part.existing_items.tolist(), "new_items": part.new_items.tolist(),
        "train_users": train_users.tolist(), "validation_users": val_users.tolist(),
        "task_users": task_users, "config": cfg.to_dict(),
    }
    ws.data.mkdir(parents=True, exist_ok=True)
    ws.path("data/partition.json").write_text(json.dumps(meta, sort_keys=True), encoding="utf-8")

    user_map = {str(raw): r for r, raw in enumerate(user_raw)}
    item_map = {str(raw): r for r, raw in enumerate(item_raw)}
    user_records = read_attribute_records(cfg.user_attributes_path)
    item_records = read_attribute_records(cfg.item_attributes_path)
    x_user = encode_attributes(AttributeSchema.from_records(user_records), user_records, user_map, m.n_users)
    x_item = encode_attributes(AttributeSchema.from_records(item_records), item_records, item_map, m.n_items)
    ws.save_checkpoint("data/attributes.tmag", {"attr/user": x_user, "attr/item": x_item}, cfg)

    summary = {"users": m.n_users, "items": m.n_items, "positives": m.nnz, "train_users": len(train_users),
               "validation_users": len(val_users), **{f"task{k}_users": len(task_users[str(k)]) for k in TASKS}}
    logger.info("ingest: %s", summary)
    return summary


# --- autoencoder and clustering -------------------------------------------------


def load_attributes(ws: Workspace) -> tuple[np.ndarray, np.ndarray]:
    c = ws.load_checkpoint("data/attributes.tmag", "ingest")
    return c.tensors["attr/user"].astype(np.float64), c.tensors["attr/item"].astype(np.float64)


def pretrain_ae(cfg: RunConfig) -> dict[str, float]:
    """Train the user and item autoencoders to convergence."""
    ws = Workspace(cfg.workdir)
    x_user, x_item = load_attributes(ws)
    tensors, losses = {}, {}
    for prefix, x, offset in (("ae_user", x_user, 0), ("ae_item", x_item, 1)):
        params = train_autoencoder(x, cfg.latent_dim, cfg.ae_lambda, cfg.ae_lr, cfg.ae_max_epochs, cfg.ae_tol,
                                   cfg.seed + offset, cfg.reg_biases)
        losses[prefix] = ae_loss(params, x, cfg.ae_lambda, cfg.reg_biases)
        tensors.update(params.tensors(prefix))
    ws.save_checkpoint("ae.tmag", tensors, cfg)
    logger.info("autoencoders trained: %s", losses)
    return losses


def load_autoencoders(ws: Workspace) -> tuple[AutoencoderParams, AutoencoderParams]:
    c = ws.load_checkpoint("ae.tmag", "pretrain-ae")
    tensors = {n: t.astype(np.float64) for n, t in c.tensors.items()}
    return AutoencoderParams.from_tensors(tensors, "ae_user"), AutoencoderParams.from_tensors(tensors, "ae_item")


def cluster_space(cfg: RunConfig, ae_user: AutoencoderParams, x_user: np.ndarray) -> np.ndarray:
    """Rows K-Means runs on: latent codes, or raw attribute vectors when ``cluster_on = raw``."""
    return x_user if cfg.cluster_on == "raw" else encode(ae_user, x_user)


def cluster(cfg: RunConfig) -> Clustering:
    ws = Workspace(cfg.workdir)
    meta = ws.partition()
    x_user, _ = load_attributes(ws)
    ae_user, _ = load_autoencoders(ws)
    users = np.asarray(meta["train_users"], dtype=np.int64)
    space = cluster_space(cfg, ae_user, x_user)
    result = kmeans(space[users], cfg.n_clusters, cfg.kmeans_max_iters, cfg.kmeans_n_init, cfg.seed, users)
    ws.write_lines("clusters.tsv", [f"{u}\t{k}" for u, k in zip(result.users.tolist(),
                                                                result.assignment.tolist())], cfg)
    ws.save_checkpoint("clusters.tmag", {
        "kmeans/centroids": result.centroids,
        "kmeans/inertia": np.asarray([result.inertia]),
    }, cfg)
    return result


def load_clustering(ws: Workspace) -> Clustering:
    c = ws.load_checkpoint("clusters.tmag", "cluster")
    frame = ws.read_table("clusters.tsv", ["user", "cluster"], "cluster")
    return Clustering(c.tensors["kmeans/centroids"].astype(np.float64), frame["cluster"].to_numpy(np.int64),
                      frame["user"].to_numpy(np.int64), float(c.tensors["kmeans/inertia"][0]))


# --- meta-training --------------------------------------------------------------


@dataclass
class Session:
    """Inputs shared by meta-train, meta-test and export."""

    cfg: RunConfig
    ws: Workspace
    meta: dict[str, Any]
    x_user: np.ndarray
    x_item: np.ndarray
    ae_user: AutoencoderParams
    ae_item: AutoencoderParams
    clustering: Clustering
    space: np.ndarray

    @classmethod
    def open(cls, cfg: RunConfig) -> Session:
        ws = Workspace(cfg.workdir)
        meta = ws.partition()
        x_user, x_item = load_attributes(ws)
        ae_user, ae_item = load_autoencoders(ws)
        clustering = load_clustering(ws)
        return cls(cfg, ws, meta, x_user, x_item, ae_user, ae_item, clustering,
                   cluster_space(cfg, ae_user, x_user))

    def users(self, key: str) -> np.ndarray:
        return np.asarray(self.meta[key], dtype=np.int64)

    def cluster_labels(self, extra_users=()) -> np.ndarray:
        """Cluster id per user: trained assignments plus nearest-centroid labels for ``extra_users``."""
        labels = np.full(self.meta["n_users"], -1, dtype=np.int64)
        labels[self.clustering.users] = self.clustering.assignment
        extra = np.asarray(extra_users, dtype=np.int64)
        if extra.size:
            labels[extra] = assign_new_users(self.space[extra], self.clustering)
        return labels

    def objective(self, base: ImplicitMatrix) -> TmagObjective:
        cfg = self.cfg
        weights = LossWeights(cfg.lambda_gen, cfg.lambda_mi, cfg.lambda_reg, cfg.tau)
        augment = self.augment_config()
        options = ObjectiveOptions(cfg.n_layers, cfg.layer_combine, augment.effective_alpha, cfg.infonce_denominator,
                                   cfg.gen_grad, cfg.finetune_ae)
        return TmagObjective(build_graph(base), self.x_user, self.x_item, weights, options)

    def augment_config(self) -> AugmentConfig:
        cfg = self.cfg
        return AugmentConfig(cfg.blend_alpha, cfg.edge_threshold, cfg.neg_per_pos, cfg.augment, cfg.augment_top_items)

    def context(self, base: ImplicitMatrix, pool, labels: np.ndarray,
                validation: ValidationSet | None = None) -> MetaContext:
        cfg = self.cfg
        return MetaContext(base, np.asarray(pool, dtype=np.int64), labels, self.clustering, self.augment_config(),
                           cfg.neg_per_pos, cfg.contrastive_batch, cfg.eval_k, validation)


def meta_train_stage(cfg: RunConfig) -> TrainingLog:
    s = Session.open(cfg)
    ws = s.ws
    meta_support, meta_query = ws.split("meta_support"), ws.split("meta_query")
    val_support, val_query = ws.split("val_support"), ws.split("val_query")
    val_users = s.users("validation_users")
    base = meta_support.union(val_support)
    tasks = build_tasks(s.clustering, meta_support, meta_query)
    validation = ValidationSet(val_users, val_support, val_query, s.space[val_users]) if val_users.size else None
    ctx = s.context(base, s.meta["existing_items"], s.cluster_labels(val_users), validation)
    theta0 = ModelParams.init(s.meta["n_users"], s.meta["n_items"], cfg.embedding_dim, s.ae_user, s.ae_item,
                              cfg.seed, cfg.finetune_ae)

    def checkpoint(epoch: int, theta: ModelParams, log: TrainingLog) -> None:
        ws.save_checkpoint("model.tmag", theta.tensors, cfg)

    best, log, _ = meta_train(tasks, theta0, MetaConfig.from_run_config(cfg), s.objective(base), ctx,
                              on_epoch=checkpoint)
    ws.save_checkpoint("model.tmag", best.tensors, cfg)
    ws.write_jsonl("train_log.jsonl", log.records, cfg)
    if log.augmentation is not None:
        log.augmentation.write_report(ws.path("augmentation.tsv"), f"# config={cfg.to_json()}")
    return log


def load_model(s: Session) -> ModelParams:
    c = s.ws.load_checkpoint("model.tmag", "meta-train")
    tensors = {n: t.astype(np.float64) for n, t in c.tensors.items()}
    template = ModelParams.init(s.meta["n_users"], s.meta["n_items"], s.cfg.embedding_dim, s.ae_user, s.ae_item,
                                s.cfg.seed, s.cfg.finetune_ae)
    missing = set(template.tensors) - set(tensors)
    if missing:
        raise DataError(f"model checkpoint lacks tensors: {', '.join(sorted(missing))}")
    return ModelParams(tensors, template.frozen)


def augment_stats(cfg: RunConfig, thresholds=(0.5, 0.6, 0.7, 0.8, 0.9)) -> dict[str, Any]:
    """Regenerate augmentation with the trained model; count edges over a threshold sweep."""
    s = Session.open(cfg)
    theta = load_model(s)
    base = s.ws.split("meta_support").union(s.ws.split("val_support"))
    objective = s.objective(base)
    counts = {}
    result = None
    for t in thresholds:
        ctx = s.context(base, s.meta["existing_items"], s.cluster_labels())
        ctx.augment = dataclasses.replace(ctx.augment, t=t, mode="both" if cfg.augment == "none" else cfg.augment)
        _, res = augment_graph(theta, objective, ctx)
        counts[f"{t:.1f}"] = res.count
        if abs(t - cfg.edge_threshold) < 1e-12:
            result = res
    if result is None:
        ctx = s.context(base, s.meta["existing_items"], s.cluster_labels())
        _, result = augment_graph(theta, objective, ctx)
    result.write_report(s.ws.path("augmentation.tsv"), f"# config={cfg.to_json()}")
    return {"edges": result.count, "mean_score": result.mean_score, "by_threshold": counts,
            "observed_edges": base.nnz}


# --- meta-testing and evaluation ------------------------------------------------


def _write_rankings(ws: Workspace, reports: list[MetricReport], cfg: RunConfig, name: str = "rankings.tsv") -> None:
    lines = []
    for report in reports:
        for ranked in report.rankings:
            for rank, (item, score) in enumerate(zip(ranked.items.tolist(), ranked.scores.tolist()), start=1):
                lines.append(f"{report.task}\t{ranked.user}\t{rank}\t{item}\t{score:.9g}")
    ws.write_lines(name, lines, cfg)


def _metric_records(reports: list[MetricReport]) -> list[dict]:
    return [record for report in reports for record in report.to_records()]


def meta_test(cfg: RunConfig) -> list[MetricReport]:
    """Adapt per cluster on each task's support set and rank that task's candidates."""
    s = Session.open(cfg)
    ws = s.ws
    theta = load_model(s)
    new_users, new_items = s.users("new_users"), s.users("new_items")
    supports = {k: ws.split(f"task{k}_support") for k in TASKS}
    base = ws.split("meta_support").union(ws.split("val_support"))
    for k in TASKS:
        base = base.union(supports[k])

    theta = init_new_rows(theta, new_users, new_items, cfg.seed)
    objective = s.objective(base)
    test_users = np.unique(np.concatenate([np.asarray(s.meta["task_users"][str(k)], dtype=np.int64) for k in TASKS]))
    labels = s.cluster_labels(test_users)
    meta_cfg = MetaConfig.from_run_config(cfg)
    ctx = s.context(base, np.arange(s.meta["n_items"]), labels)
    if ctx.augment.enabled:
        objective, result = augment_graph(theta, objective, ctx, users=s.users("new_users"))
        logger.info("meta-test augmentation: %s", result.summary())

    reports = []
    for k in TASKS:
        users = np.asarray(s.meta["task_users"][str(k)], dtype=np.int64)
        candidates = s.users("existing_items") if k == 1 else new_items
        query = ws.split(f"task{k}_query")
        if users.size == 0:
            logger.warning("task %d has no eligible users", k)
            reports.append(MetricReport(task=k, k=cfg.eval_k, n_users=0))
            continue
        task_ctx = dataclasses.replace(ctx, pool=candidates)
        adapted = meta_test_adapt(theta, users, supports[k], s.clustering, s.space[users], meta_cfg, objective,
                                  task_ctx)
        reports.append(evaluate_users(k, users, query, supports[k], candidates, adapted.scorer(objective),
                                      cfg.eval_k, cfg.map_norm))
    _write_rankings(ws, reports, cfg)
    ws.write_jsonl("metrics.jsonl", _metric_records(reports), cfg)
    return reports


def evaluate(cfg: RunConfig) -> list[MetricReport]:
    """Recompute metrics from stored rankings."""
    ws = Workspace(cfg.workdir)
    ws.require("model.tmag", "meta-train")
    frame = ws.read_table("rankings.tsv", ["task", "user", "rank", "item", "score"], "meta-test")
    reports = []
    for k in TASKS:
        rows = frame[frame["task"] == k].sort_values(["user", "rank"], kind="mergesort")
        rankings = [RankedList(int(u), g["item"].to_numpy(np.int64), g["score"].to_numpy(np.float64))
                    for u, g in rows.groupby("user", sort=True)]
        reports.append(evaluate_rankings(k, rankings, ws.split(f"task{k}_query"), cfg.eval_k, cfg.map_norm))
    ws.write_jsonl("metrics.jsonl", _metric_records(reports), cfg)
    return reports


def baseline(cfg: RunConfig) -> list[MetricReport]:
    """MF-BPR trained on meta-training data, fine-tuned per task on the support sets."""
    ws = Workspace(cfg.workdir)
    meta = ws.partition()
    train = ws.split("meta_support").union(ws.split("meta_query")).union(ws.split("val_support"))
    params = mf_train(train, cfg.embedding_dim, cfg.mf_lr, cfg.mf_epochs, cfg.seed, cfg.mf_reg,
                      np.asarray(meta["existing_items"], dtype=np.int64))
    params = params.reinit_rows(meta["new_users"], meta["new_items"], cfg.seed)
    ws.save_checkpoint("baseline.tmag", params.tensors(), cfg)
    reports = []
    for k in TASKS:
        users = np.asarray(meta["task_users"][str(k)], dtype=np.int64)
        candidates = np.asarray(meta["existing_items"] if k == 1 else meta["new_items"], dtype=np.int64)
        if users.size == 0:
            reports.append(MetricReport(task=k, k=cfg.eval_k, n_users=0))
            continue
        support = ws.split(f"task{k}_support")
        tuned: MfParams = mf_finetune(params, support, cfg.mf_lr, cfg.mf_finetune_steps, cfg.seed + k, cfg.mf_reg,
                                      candidates)
        reports.append(evaluate_users(k, users, ws.split(f"task{k}_query"), support, candidates, mf_scorer(tuned),
                                      cfg.eval_k, cfg.map_norm))
    ws.write_jsonl("baseline_metrics.jsonl", _metric_records(reports), cfg)
    return reports


def export_embeddings(cfg: RunConfig) -> tuple[Path, Path]:
    """Fused user and item vectors, keyed by raw id, for external visualisation."""
    s = Session.open(cfg)
    theta = load_model(s)
    base = s.ws.split("meta_support").union(s.ws.split("val_support"))
    f_user, f_item = s.objective(base).fused(theta)
    user_raw = load_id_map(s.ws.require("data/user_ids.tsv", "ingest"))
    item_raw = load_id_map(s.ws.require("data/item_ids.tsv", "ingest"))
    paths = []
    for name, table, raw in (("embeddings_user.tsv", f_user, user_raw), ("embeddings_item.tsv", f_item, item_raw)):
        lines = [f"{rid}\t" + ",".join(f"{v:.6g}" for v in row) for rid, row in zip(raw.tolist(), table.tolist())]
        paths.append(s.ws.write_lines(name, lines, cfg))
    return paths[0], paths[1]


def run_all(cfg: RunConfig) -> list[MetricReport]:
    """ingest → pretrain-ae → cluster → meta-train → meta-test."""
    ingest(cfg)
    pretrain_ae(cfg)
    cluster(cfg)
    meta_train_stage(cfg)
    return meta_test(cfg)

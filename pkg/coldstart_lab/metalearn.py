"""Task-level meta-learning: inner adaptation, outer updates, training loop and meta-test adaptation."""

from __future__ import annotations

import logging
import os
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from coldstart_lab.augment import AugmentationResult, AugmentConfig, generate_augmentation
from coldstart_lab.dataset import ImplicitMatrix
from coldstart_lab.errors import ConfigError, DataError, EmptySupportError, NumericError
from coldstart_lab.evaluator import evaluate_users
from coldstart_lab.graph import build_graph
from coldstart_lab.model import (
    ITEM_EMB,
    USER_EMB,
    GradientBundle,
    LossBreakdown,
    ModelParams,
    TaskBatch,
    TmagObjective,
    sample_task_batch,
)
from coldstart_lab.taskgen import Clustering, TaskSet, assign_new_users

logger = logging.getLogger(__name__)

ORDERS = ("first_order", "second_order_hvp")


@dataclass(frozen=True)
class MetaConfig:
    inner_lr: float = 0.001
    outer_lr: float = 0.001
    inner_steps: int = 1
    order: str = "first_order"
    epochs: int = 100
    augment_every: int = 1
    seed: int = 0
    patience: int = 10
    batch_tasks: int = 1
    hvp_eps: float = 0.0
    task_subgraph: bool = False
    deterministic: bool = True

    def __post_init__(self) -> None:
        if self.inner_lr < 0 or self.outer_lr < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.inner_steps < 0:
            raise ConfigError(f"inner_steps must be >= 0, got {self.inner_steps}")
        if self.order not in ORDERS:
            raise ConfigError(f"unknown outer-update order {self.order!r}")

    @classmethod
    def from_run_config(cls, cfg: Any) -> MetaConfig:
        return cls(
            inner_lr=cfg.inner_lr, outer_lr=cfg.outer_lr, inner_steps=cfg.inner_steps, order=cfg.order,
            epochs=cfg.epochs, augment_every=cfg.augment_every, seed=cfg.seed, patience=cfg.patience,
            batch_tasks=cfg.batch_tasks, hvp_eps=cfg.hvp_eps, task_subgraph=cfg.task_subgraph,
            deterministic=cfg.deterministic,
        )


@dataclass
class AdaptedParams:
    """θ' for one task, with the inner trajectory needed by the second-order outer step."""

    theta_prime: ModelParams
    task_id: int
    steps: int
    trajectory: list[ModelParams] = field(default_factory=list)
    support: Any = None
    losses: list[float] = field(default_factory=list)


def inner_update(theta: ModelParams, support: Any, cfg: MetaConfig, objective: Any,
                 task_id: int = -1) -> AdaptedParams:
    """``cfg.inner_steps`` gradient steps on the support batch; ``theta`` is never modified."""
    if isinstance(support, TaskBatch) and support.is_empty:
        raise DataError(f"task {task_id}: empty support batch")
    current = theta.clone()
    trajectory: list[ModelParams] = []
    losses: list[float] = []
    for step in range(cfg.inner_steps):
        trajectory.append(current)
        breakdown, grad = objective.gradients(current, support)
        losses.append(breakdown.total)
        current = current.axpy(grad, cfg.inner_lr)
        if not current.is_finite():
            raise NumericError(f"task {task_id}: inner step {step} produced non-finite parameters",
                               breakdown.to_dict())
    return AdaptedParams(current, task_id, cfg.inner_steps, trajectory, support, losses)


def outer_gradient(adapted: AdaptedParams, query: Any, cfg: MetaConfig,
                   objective: Any) -> tuple[LossBreakdown, GradientBundle]:
    """Query-set gradient at θ', pulled back through the inner steps in second-order mode.

    Second order walks the trajectory backwards applying v ← v − α·H(θ_s)·v, which is exact
    for one inner step.
    """
    breakdown, grad = objective.gradients(adapted.theta_prime, query)
    if cfg.order == "second_order_hvp":
        for theta_s in reversed(adapted.trajectory):
            grad = grad - objective.hvp(theta_s, adapted.support, grad, cfg.hvp_eps).scaled(cfg.inner_lr)
    return breakdown, grad


def outer_update(theta: ModelParams, adapted: AdaptedParams, query: Any, cfg: MetaConfig,
                 objective: Any) -> ModelParams:
    """θ ← θ − β·g for the task's outer gradient g."""
    _, grad = outer_gradient(adapted, query, cfg, objective)
    updated = theta.axpy(grad, cfg.outer_lr)
    if not updated.is_finite():
        raise NumericError(f"task {adapted.task_id}: outer step produced non-finite parameters")
    return updated


def _worker_count(requested: int) -> int:
    try:
        cap = int(os.environ.get("TMAG_THREADS", "1"))
    except ValueError:
        raise ConfigError("TMAG_THREADS must be an integer") from None
    return max(1, min(requested, cap))


# --- training loop --------------------------------------------------------------


@dataclass
class ValidationSet:
    """Held-out existing users adapted per cluster and scored on existing items."""

    users: np.ndarray
    support: ImplicitMatrix
    query: ImplicitMatrix
    latent: np.ndarray


@dataclass
class MetaContext:
    """Everything the training loop needs besides θ and the tasks."""

    base: ImplicitMatrix
    pool: np.ndarray
    cluster_labels: np.ndarray
    clustering: Clustering
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    neg_per_pos: int = 4
    contrastive_batch: int = 512
    eval_k: int = 10
    validation: ValidationSet | None = None


@dataclass
class TrainingLog:
    records: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_recall: float = float("-inf")
    stopped_early: bool = False
    augmentation: AugmentationResult | None = None

    def add(self, **record: Any) -> None:
        self.records.append(record)


def augment_graph(theta: ModelParams, objective: TmagObjective, ctx: MetaContext, users=None,
                  items=None) -> tuple[TmagObjective, AugmentationResult]:
    """Regenerate augmented edges from the base interactions and rebuild the graph."""
    combined = objective.propagated(theta)
    _, z_item = objective.latent(theta)
    result = generate_augmentation(ctx.base.matrix, combined[objective.graph.n_users :], z_item, theta.aug,
                                   ctx.augment, users=users, items=ctx.pool if items is None else items)
    return objective.with_graph(build_graph(ctx.base, result.pairs)), result


def _task_rng(seed: int, task_id: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, 100 + task_id, step])


def _run_task(theta: ModelParams, task, objective: TmagObjective, ctx: MetaContext, cfg: MetaConfig,
              step: int) -> tuple[dict, GradientBundle] | None:
    task.check_disjoint()
    rng = _task_rng(cfg.seed, task.task_id, step)
    obj = objective.with_graph(objective.graph.restrict_users(task.users)) if cfg.task_subgraph else objective
    kwargs = dict(neg_per_pos=ctx.neg_per_pos, cluster_labels=ctx.cluster_labels,
                  contrastive_batch=ctx.contrastive_batch)
    support = sample_task_batch(task.support, task.users, obj.graph, ctx.pool, rng, **kwargs)
    if support.is_empty:
        logger.warning("task %d: no support triples could be sampled; skipped", task.task_id)
        return None
    query = sample_task_batch(task.query, task.users, obj.graph, ctx.pool, rng, **kwargs)
    adapted = inner_update(theta, support, cfg, obj, task.task_id)
    breakdown, grad = outer_gradient(adapted, query, cfg, obj)
    record = {"task": task.task_id, "inner_loss": adapted.losses[0] if adapted.losses else None,
              "query_loss": breakdown.total, "query_breakdown": breakdown.to_dict()}
    return record, grad


def validation_recall(theta: ModelParams, objective: TmagObjective, ctx: MetaContext, cfg: MetaConfig) -> float:
    """Mean Recall@K of validation users after per-cluster adaptation; NaN without validation users."""
    val = ctx.validation
    if val is None or len(val.users) == 0:
        return float("nan")
    result = meta_test_adapt(theta, val.users, val.support, ctx.clustering, val.latent, cfg, objective, ctx,
                             reinit=False)
    report = evaluate_users(0, val.users, val.query, val.support, ctx.pool, result.scorer(objective), ctx.eval_k)
    return report.recall


def meta_train(tasks: TaskSet, theta0: ModelParams, cfg: MetaConfig, objective: TmagObjective, ctx: MetaContext,
               on_epoch: Callable[[int, ModelParams, TrainingLog], None] | None = None,
               ) -> tuple[ModelParams, TrainingLog, TmagObjective]:
    """Visit every task once per epoch in a seeded random order, adapting and updating θ.

    Returns the parameters with the best validation recall (the last ones without validation
    users), the training log and the objective bound to the final graph.
    """
    log = TrainingLog()
    if cfg.epochs == 0:
        return theta0.clone(), log, objective
    if len(tasks) == 0:
        raise DataError("meta-training needs at least one task")
    if cfg.inner_steps < 1:
        raise ConfigError("meta-training needs inner_steps >= 1")

    theta = theta0.clone()
    best = theta
    rng = np.random.default_rng([cfg.seed, 20])
    # one worker in deterministic mode
    workers = 1 if cfg.deterministic else _worker_count(cfg.batch_tasks)
    initial = validation_recall(theta, objective, ctx, cfg)
    log.add(epoch=0, val_recall=initial)
    if not np.isnan(initial):
        log.best_recall = initial
    wait = 0
    step = 0

    for epoch in range(1, cfg.epochs + 1):
        if ctx.augment.enabled and (epoch - 1) % cfg.augment_every == 0:
            objective, log.augmentation = augment_graph(theta, objective, ctx)
            log.add(epoch=epoch, augmented_edges=log.augmentation.count,
                    augmented_mean_score=log.augmentation.mean_score)

        order = rng.permutation(len(tasks))
        for start in range(0, len(order), cfg.batch_tasks):
            group = [tasks[int(t)] for t in order[start : start + cfg.batch_tasks]]
            steps = range(step, step + len(group))
            step += len(group)
            if workers > 1 and len(group) > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    outcomes = list(pool.map(lambda ts: _run_task(theta, ts[0], objective, ctx, cfg, ts[1]),
                                             zip(group, steps)))
            else:
                outcomes = [_run_task(theta, t, objective, ctx, cfg, s) for t, s in zip(group, steps)]
            outcomes = [o for o in outcomes if o is not None]
            if not outcomes:
                continue
            total = outcomes[0][1]
            for _, g in outcomes[1:]:
                total = total + g
            theta = theta.axpy(total.scaled(1.0 / len(outcomes)), cfg.outer_lr)
            if not theta.is_finite():
                raise NumericError(f"epoch {epoch}: outer step produced non-finite parameters")
            for record, _ in outcomes:
                log.add(epoch=epoch, **record)

        recall = validation_recall(theta, objective, ctx, cfg)
        log.add(epoch=epoch, val_recall=recall)
        if on_epoch is not None:
            on_epoch(epoch, theta, log)
        if np.isnan(recall):
            best = theta
            continue
        if recall > log.best_recall:
            best, log.best_recall, log.best_epoch, wait = theta, recall, epoch, 0
        else:
            wait += 1
            if wait >= cfg.patience:
                logger.info("early stop at epoch %d; best validation recall %.4f at epoch %d",
                            epoch, log.best_recall, log.best_epoch)
                log.stopped_early = True
                break
    return best, log, objective


# --- meta-test ------------------------------------------------------------------


@dataclass
class MetaTestResult:
    """Adapted parameters per cluster and the cluster of every adapted user."""

    adapted: dict[int, AdaptedParams]
    user_cluster: dict[int, int]

    def params_for(self, user: int) -> ModelParams:
        return self.adapted[self.user_cluster[user]].theta_prime

    def scorer(self, objective: TmagObjective) -> Callable[[np.ndarray], np.ndarray]:
        """Score users with their cluster's adapted parameters; fused tables computed once per cluster."""
        cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

        def score(users: np.ndarray) -> np.ndarray:
            rows = []
            for u in np.asarray(users, dtype=np.int64).tolist():
                k = self.user_cluster[u]
                if k not in cache:
                    cache[k] = objective.fused(self.adapted[k].theta_prime)
                f_user, f_item = cache[k]
                rows.append(f_item @ f_user[u])
            return np.vstack(rows) if rows else np.zeros((0, objective.graph.n_items))

        return score


def init_new_rows(theta: ModelParams, new_users, new_items, seed: int) -> ModelParams:
    """Re-draw the free embedding rows of entities unseen during meta-training."""
    rng = np.random.default_rng([seed, 30])
    return theta.reinit_rows(USER_EMB, new_users, rng).reinit_rows(ITEM_EMB, new_items, rng)


def meta_test_adapt(theta: ModelParams, new_users, support: ImplicitMatrix, clusters: Clustering,
                    z_new: np.ndarray, cfg: MetaConfig, objective: TmagObjective, ctx: MetaContext,
                    reinit: bool = False, new_items=None) -> MetaTestResult:
    """Assign users to their nearest centroid and run the inner loop once per cluster.

    ``z_new[r]`` is the latent attribute vector of ``new_users[r]``. Users of one cluster
    share one adapted θ'. ``inner_steps = 0`` evaluates θ as-is.
    """
    new_users = np.asarray(new_users, dtype=np.int64)
    empty = new_users[support.degrees()[new_users] == 0]
    if empty.size:
        raise EmptySupportError(f"{empty.size} users have no support interactions (first: {int(empty[0])})")
    if reinit:
        theta = init_new_rows(theta, new_users, [] if new_items is None else new_items, cfg.seed)
    labels = assign_new_users(z_new, clusters) if len(new_users) else np.zeros(0, dtype=np.int64)
    cluster_labels = ctx.cluster_labels.copy()
    cluster_labels[new_users] = labels

    adapted: dict[int, AdaptedParams] = {}
    for k in np.unique(labels).tolist():
        members = new_users[labels == k]
        rng = np.random.default_rng([cfg.seed, 40, k])
        batch = sample_task_batch(support, members, objective.graph, ctx.pool, rng, ctx.neg_per_pos,
                                  cluster_labels, ctx.contrastive_batch)
        if cfg.inner_steps == 0 or batch.is_empty:
            adapted[k] = AdaptedParams(theta.clone(), k, 0)
        else:
            adapted[k] = inner_update(theta, batch, cfg, objective, k)
    return MetaTestResult(adapted, dict(zip(new_users.tolist(), labels.tolist())))

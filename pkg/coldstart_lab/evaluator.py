"""Full-ranking evaluation: top-K lists and Recall / NDCG / MAP at K."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from coldstart_lab.dataset import ImplicitMatrix
from coldstart_lab.errors import DataError

logger = logging.getLogger(__name__)

METRICS = ("recall", "ndcg", "map")
_BLOCK = 512

Scorer = Callable[[np.ndarray], np.ndarray]


@dataclass
class RankedList:
    """Top-K items for one user, best first; ties resolved by item id ascending."""

    user: int
    items: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return len(self.items)


def rank_candidates(scores: np.ndarray, candidates, exclusions, k: int, user: int = -1) -> RankedList:
    """Rank ``candidates`` minus ``exclusions`` by ``scores[item]`` and keep the first ``k``.

    Args:
        scores: Score of every item id (indexed by item id).
        candidates: Item ids eligible for the task.
        exclusions: Item ids never ranked for this user (its support items).
        k: Cut-off, at least 1.
    """
    if k < 1:
        raise DataError(f"K must be >= 1, got {k}")
    candidates = np.asarray(candidates, dtype=np.int64)
    exclusions = np.asarray(exclusions, dtype=np.int64)
    pool = candidates[~np.isin(candidates, exclusions)]
    if pool.size == 0:
        raise DataError(f"user {user}: no candidate items left after exclusions")
    pool_scores = np.asarray(scores, dtype=np.float64)[pool]
    order = np.lexsort((pool, -pool_scores))[:k]
    return RankedList(user, pool[order], pool_scores[order])


def _hits(ranked: RankedList, relevant, k: int | None) -> tuple[np.ndarray, int]:
    relevant = np.asarray(relevant, dtype=np.int64)
    if relevant.size == 0:
        raise DataError(f"user {ranked.user}: empty relevant set")
    top = ranked.items if k is None else ranked.items[:k]
    return np.isin(top, relevant), int(np.unique(relevant).size)


def recall_at_k(ranked: RankedList, relevant, k: int | None = None) -> float:
    """|top-K ∩ relevant| / |relevant|."""
    hits, n_rel = _hits(ranked, relevant, k)
    return float(hits.sum()) / n_rel


def ndcg_at_k(ranked: RankedList, relevant, k: int | None = None) -> float:
    """Binary-gain DCG@K over the ideal DCG of min(|relevant|, K) hits."""
    hits, n_rel = _hits(ranked, relevant, k)
    cutoff = len(hits) if k is None else k
    discounts = 1.0 / np.log2(np.arange(2, len(hits) + 2))
    dcg = float(np.sum(discounts[hits]))
    ideal = sum(1.0 / math.log2(r + 1) for r in range(1, min(n_rel, cutoff) + 1))
    return dcg / ideal


def map_at_k(ranked: RankedList, relevant, k: int | None = None, norm: str = "min") -> float:
    """Average precision at K, normalised by min(|relevant|, K) or by |relevant|."""
    hits, n_rel = _hits(ranked, relevant, k)
    cutoff = len(hits) if k is None else k
    ranks = np.flatnonzero(hits) + 1
    precision = np.arange(1, len(ranks) + 1) / ranks
    denom = min(n_rel, cutoff) if norm == "min" else n_rel
    return float(precision.sum()) / denom


@dataclass
class MetricReport:
    """Per-task means of Recall, NDCG and MAP at K."""

    task: int
    k: int
    n_users: int
    recall: float = 0.0
    ndcg: float = 0.0
    map: float = 0.0
    per_user: dict[int, dict[str, float]] = field(default_factory=dict)
    rankings: list[RankedList] = field(default_factory=list)

    def value(self, metric: str) -> float:
        return {"recall": self.recall, "ndcg": self.ndcg, "map": self.map}[metric]

    def to_records(self) -> list[dict]:
        """One JSON-ready record per metric; none when no user was evaluated."""
        if self.n_users == 0:
            return []
        return [{"task": self.task, "metric": m, "k": self.k, "value": self.value(m), "n_users": self.n_users}
                for m in METRICS]


def _add_user(report: MetricReport, ranked: RankedList, relevant: np.ndarray, map_norm: str) -> None:
    k = report.k
    report.per_user[ranked.user] = {
        "recall": recall_at_k(ranked, relevant, k),
        "ndcg": ndcg_at_k(ranked, relevant, k),
        "map": map_at_k(ranked, relevant, k, map_norm),
    }
    report.rankings.append(ranked)


def _finalize(report: MetricReport) -> None:
    report.n_users = len(report.per_user)
    if report.n_users:
        for metric in METRICS:
            setattr(report, metric, float(np.mean([v[metric] for v in report.per_user.values()])))


def evaluate_users(task: int, users, query: ImplicitMatrix, support: ImplicitMatrix, candidates,
                   scorer: Scorer, k: int = 10, map_norm: str = "min") -> MetricReport:
    """Rank each user's candidates with ``scorer`` and average the metrics over users.

    ``scorer(users)`` returns a (len(users), n_items) score table. Users whose query
    holds no candidate item are skipped.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    users = np.asarray(users, dtype=np.int64)
    report = MetricReport(task=task, k=k, n_users=0)
    for start in range(0, len(users), _BLOCK):
        block = users[start : start + _BLOCK]
        table = scorer(block)
        for row, u in enumerate(block.tolist()):
            relevant = np.intersect1d(query.row(u), candidates)
            if relevant.size == 0:
                continue
            ranked = rank_candidates(table[row], candidates, support.row(u), k, user=u)
            _add_user(report, ranked, relevant, map_norm)
    _finalize(report)
    if report.n_users == 0:
        logger.warning("task %d: no user with query items among the candidates", task)
    return report


def evaluate_rankings(task: int, rankings: list[RankedList], query: ImplicitMatrix, k: int = 10,
                      map_norm: str = "min") -> MetricReport:
    """Recompute a report from stored rankings (the evaluate command)."""
    report = MetricReport(task=task, k=k, n_users=0)
    for ranked in rankings:
        relevant = query.row(ranked.user)
        if relevant.size == 0:
            continue
        _add_user(report, ranked, relevant, map_norm)
    _finalize(report)
    return report


"""Aligned task construction: K-Means over user attribute embeddings."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import kmeans_plusplus

from coldstart_lab.dataset import ImplicitMatrix
from coldstart_lab.errors import DataError

logger = logging.getLogger(__name__)

_BLOCK = 2048


@dataclass
class Clustering:
    """K-Means result over the rows of a latent table.

    ``users[r]`` is the user id of row ``r``; ``assignment[r]`` its cluster.
    """

    centroids: np.ndarray
    assignment: np.ndarray
    users: np.ndarray
    inertia: float
    inertia_history: list[float] = field(default_factory=list)

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    def cluster_of(self) -> dict[int, int]:
        return dict(zip(self.users.tolist(), self.assignment.tolist()))

    def members(self, k: int) -> np.ndarray:
        return self.users[self.assignment == k]


def squared_distances(Z: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distances, computed blockwise."""
    out = np.empty((Z.shape[0], centroids.shape[0]))
    for start in range(0, Z.shape[0], _BLOCK):
        diff = Z[start : start + _BLOCK, None, :] - centroids[None, :, :]
        out[start : start + _BLOCK] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


def nearest_centroid(Z: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Argmin over centroids (ties go to the lowest index) and the winning distances."""
    dist = squared_distances(Z, centroids)
    labels = np.argmin(dist, axis=1)
    return labels, dist[np.arange(len(labels)), labels]


def _repair_empty(Z: np.ndarray, centroids: np.ndarray, labels: np.ndarray, best: np.ndarray) -> bool:
    """Move each empty centroid onto the point farthest from its own centroid."""
    K = centroids.shape[0]
    counts = np.bincount(labels, minlength=K)
    empty = np.flatnonzero(counts == 0)
    if empty.size == 0:
        return False
    best = best.copy()
    for k in empty:
        donors = counts[labels] > 1
        candidates = np.where(donors, best, -1.0)
        far = int(np.argmax(candidates))
        counts[labels[far]] -= 1
        labels[far] = k
        counts[k] = 1
        best[far] = 0.0
        centroids[k] = Z[far]
    return True


def _lloyd(Z: np.ndarray, centroids: np.ndarray, max_iters: int) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    centroids = centroids.copy()
    labels, best = nearest_centroid(Z, centroids)
    history = [float(best.sum())]
    for _ in range(max_iters):
        if _repair_empty(Z, centroids, labels, best):
            labels, best = nearest_centroid(Z, centroids)
        counts = np.bincount(labels, minlength=centroids.shape[0])
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, Z)
        nonempty = counts > 0
        centroids = centroids.copy()
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        new_labels, best = nearest_centroid(Z, centroids)
        history.append(float(best.sum()))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    # every cluster must own a point even when the iteration budget ran out
    if _repair_empty(Z, centroids, labels, best):
        best = squared_distances(Z, centroids)[np.arange(len(labels)), labels]
        history.append(float(best.sum()))
    return centroids, labels, history[-1], history


def kmeans(Z: np.ndarray, K: int, max_iters: int = 300, n_init: int = 10, seed: int = 0,
           users: np.ndarray | None = None) -> Clustering:
    """Lloyd's algorithm from k-means++ seeds; best of ``n_init`` restarts by inertia."""
    Z = np.asarray(Z, dtype=np.float64)
    n = Z.shape[0]
    if K < 1:
        raise DataError(f"K must be >= 1, got {K}")
    if K > n:
        raise DataError(f"K={K} exceeds the number of users ({n})")
    users = np.arange(n) if users is None else np.asarray(users, dtype=np.int64)

    best: Clustering | None = None
    for restart in range(n_init):
        state = int(np.random.default_rng([seed, restart]).integers(2**31 - 1))
        seeds, _ = kmeans_plusplus(Z, n_clusters=K, random_state=state)
        centroids, labels, inertia, history = _lloyd(Z, seeds.astype(np.float64), max_iters)
        if best is None or inertia < best.inertia:
            best = Clustering(centroids, labels, users, inertia, history)
    assert best is not None
    logger.info("k-means with K=%d: inertia %.6g", K, best.inertia)
    return best


def assign_new_users(Z_new: np.ndarray, c: Clustering) -> np.ndarray:
    """Nearest trained centroid for every row of ``Z_new``; centroids are not updated."""
    Z_new = np.atleast_2d(np.asarray(Z_new, dtype=np.float64))
    if Z_new.shape[1] != c.centroids.shape[1]:
        raise DataError(f"embedding width {Z_new.shape[1]} does not match centroids {c.centroids.shape[1]}")
    labels, _ = nearest_centroid(Z_new, c.centroids)
    return labels


@dataclass
class Task:
    """One aligned task: a user cluster with its support and query interactions."""

    task_id: int
    users: np.ndarray
    support: ImplicitMatrix
    query: ImplicitMatrix

    def check_disjoint(self) -> None:
        overlap = self.support.pair_set() & self.query.pair_set()
        if overlap:
            raise DataError(f"task {self.task_id}: {len(overlap)} pairs in both support and query")


@dataclass
class TaskSet:
    tasks: list[Task]

    def __len__(self) -> int:
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, index: int) -> Task:
        return self.tasks[index]


def build_tasks(c: Clustering, support: ImplicitMatrix, query: ImplicitMatrix) -> TaskSet:
    """Collect the support and query rows of each cluster's members into a task."""
    tasks = []
    for k in range(c.K):
        members = np.sort(c.members(k))
        task_support = support.restrict(members)
        if task_support.nnz == 0:
            logger.warning("task %d has no support interactions; dropped", k)
            continue
        tasks.append(Task(k, members, task_support, query.restrict(members)))
    return TaskSet(tasks)

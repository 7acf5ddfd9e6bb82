"""Interaction augmentation: score unobserved pairs by structure and attributes, keep the confident ones."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from coldstart_lab.autoencoder import xavier_uniform
from coldstart_lab.errors import DataError

logger = logging.getLogger(__name__)

_MODES = ("both", "graph", "attribute", "none")
_BLOCK = 256


@dataclass
class AugmentParams:
    """Bilinear weights of the structure (W_g) and attribute (W_a) channels."""

    W_g: np.ndarray
    W_a: np.ndarray

    @classmethod
    def init(cls, d: int, d_z: int, seed: int | np.random.Generator = 0) -> AugmentParams:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return cls(W_g=xavier_uniform(rng, d, d), W_a=xavier_uniform(rng, d_z, d_z))


@dataclass(frozen=True)
class AugmentConfig:
    alpha: float = 0.8
    t: float = 0.8
    neg_per_pos: int = 4
    mode: str = "both"
    top_items: int = 500

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise DataError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 < self.t < 1.0:
            raise DataError(f"threshold must lie in (0, 1), got {self.t}")
        if self.mode not in _MODES:
            raise DataError(f"unknown augmentation mode {self.mode!r}")

    @property
    def effective_alpha(self) -> float:
        """Channel weight after the mode override: graph-only is 1, attribute-only is 0."""
        return {"graph": 1.0, "attribute": 0.0}.get(self.mode, self.alpha)

    @property
    def enabled(self) -> bool:
        return self.mode != "none"


def score_graph(e_items: np.ndarray, p: AugmentParams, item: int, neighbors: np.ndarray) -> float | None:
    """sigmoid(Σ_j e_jᵀ W_g e_i) over the user's neighbours; None for a user with no neighbours."""
    neighbors = np.asarray(neighbors, dtype=np.int64)
    if neighbors.size == 0:
        return None
    h = e_items[neighbors].sum(axis=0)
    return float(expit(h @ p.W_g @ e_items[item]))


def score_attr(z_items: np.ndarray, p: AugmentParams, item: int, neighbors: np.ndarray) -> float | None:
    """sigmoid(Σ_j z_jᵀ W_a z_i); None for a user with no neighbours."""
    neighbors = np.asarray(neighbors, dtype=np.int64)
    if neighbors.size == 0:
        return None
    q = z_items[neighbors].sum(axis=0)
    return float(expit(q @ p.W_a @ z_items[item]))


def blend(e1, e2, alpha: float):
    """Convex combination alpha·e1 + (1 − alpha)·e2; works on scalars and arrays."""
    if not 0.0 <= alpha <= 1.0:
        raise DataError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * e1 + (1.0 - alpha) * e2


def gen_loss(scores: np.ndarray, targets: np.ndarray) -> float:
    """Mean squared error between sampled generator scores and the observed 0/1 entries."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if scores.size == 0:
        raise DataError("generator loss needs at least one sampled cell")
    if scores.shape != targets.shape:
        raise DataError(f"score shape {scores.shape} does not match target shape {targets.shape}")
    return float(np.mean((scores - targets) ** 2))


def threshold_edges(users: np.ndarray, items: np.ndarray, scores: np.ndarray, t: float) -> np.ndarray:
    """(user, item) rows whose score is strictly above ``t``."""
    if not 0.0 < t < 1.0:
        raise DataError(f"threshold must lie in (0, 1), got {t}")
    keep = np.asarray(scores) > t
    return np.stack([np.asarray(users)[keep], np.asarray(items)[keep]], axis=1).astype(np.int64)


# --- sampled generator objective ------------------------------------------------


@dataclass
class GeneratorCells:
    """Sampled cells of the user-item grid with their 0/1 targets."""

    users: np.ndarray
    items: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return len(self.users)


def sample_generator_cells(observed: sp.csr_matrix, users, neg_per_pos: int, rng: np.random.Generator,
                           pool: np.ndarray | None = None) -> GeneratorCells:
    """Every observed positive of ``users`` plus ``neg_per_pos`` unobserved pool items per positive.

    Users without observed neighbours cannot be scored and are skipped.
    """
    pool = np.arange(observed.shape[1]) if pool is None else np.asarray(pool, dtype=np.int64)
    out_u, out_i, out_t = [], [], []
    for u in np.asarray(users, dtype=np.int64):
        pos = observed.indices[observed.indptr[u] : observed.indptr[u + 1]].astype(np.int64)
        if pos.size == 0:
            continue
        out_u.append(np.full(pos.size, u))
        out_i.append(pos)
        out_t.append(np.ones(pos.size))
        allowed = pool[~np.isin(pool, pos)]
        if allowed.size and neg_per_pos > 0:
            neg = rng.choice(allowed, size=pos.size * neg_per_pos, replace=True)
            out_u.append(np.full(neg.size, u))
            out_i.append(neg)
            out_t.append(np.zeros(neg.size))
    if not out_u:
        empty = np.zeros(0, dtype=np.int64)
        return GeneratorCells(empty, empty.copy(), np.zeros(0))
    return GeneratorCells(np.concatenate(out_u).astype(np.int64), np.concatenate(out_i).astype(np.int64),
                          np.concatenate(out_t))


@dataclass
class GeneratorPass:
    """Forward intermediates kept for the backward pass."""

    loss: float
    scores: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    alpha: float
    cells: GeneratorCells
    neighbour_rows: sp.csr_matrix
    inverse: np.ndarray
    h: np.ndarray
    q: np.ndarray
    e_cell: np.ndarray
    z_cell: np.ndarray


def generator_forward(observed: sp.csr_matrix, e_items: np.ndarray, z_items: np.ndarray, p: AugmentParams,
                      alpha: float, cells: GeneratorCells) -> GeneratorPass:
    if len(cells) == 0:
        raise DataError("generator loss needs at least one sampled cell")
    unique_users, inverse = np.unique(cells.users, return_inverse=True)
    rows = observed[unique_users]
    h = np.asarray(rows @ e_items)[inverse]
    q = np.asarray(rows @ z_items)[inverse]
    e_cell = e_items[cells.items]
    z_cell = z_items[cells.items]
    e1 = expit(np.einsum("nd,nd->n", h @ p.W_g, e_cell))
    e2 = expit(np.einsum("nd,nd->n", q @ p.W_a, z_cell))
    scores = blend(e1, e2, alpha)
    return GeneratorPass(gen_loss(scores, cells.targets), scores, e1, e2, alpha, cells, rows, inverse,
                         h, q, e_cell, z_cell)


@dataclass
class GeneratorGrad:
    W_g: np.ndarray
    W_a: np.ndarray
    e_items: np.ndarray
    z_items: np.ndarray


def generator_backward(fw: GeneratorPass, p: AugmentParams, n_items: int, scale: float = 1.0) -> GeneratorGrad:
    """Gradient of ``scale · gen_loss`` w.r.t. W_g, W_a and the item rows of e^(L) and z."""
    n = len(fw.cells)
    d_scores = scale * 2.0 * (fw.scores - fw.cells.targets) / n
    ds1 = d_scores * fw.alpha * fw.e1 * (1.0 - fw.e1)
    ds2 = d_scores * (1.0 - fw.alpha) * fw.e2 * (1.0 - fw.e2)

    dW_g = (fw.h * ds1[:, None]).T @ fw.e_cell
    dW_a = (fw.q * ds2[:, None]).T @ fw.z_cell

    d_e = np.zeros((n_items, fw.e_cell.shape[1]))
    np.add.at(d_e, fw.cells.items, ds1[:, None] * (fw.h @ p.W_g))
    d_h = np.zeros((fw.neighbour_rows.shape[0], fw.e_cell.shape[1]))
    np.add.at(d_h, fw.inverse, ds1[:, None] * (fw.e_cell @ p.W_g.T))
    d_e += fw.neighbour_rows.T @ d_h

    d_z = np.zeros((n_items, fw.z_cell.shape[1]))
    np.add.at(d_z, fw.cells.items, ds2[:, None] * (fw.q @ p.W_a))
    d_q = np.zeros((fw.neighbour_rows.shape[0], fw.z_cell.shape[1]))
    np.add.at(d_q, fw.inverse, ds2[:, None] * (fw.z_cell @ p.W_a.T))
    d_z += fw.neighbour_rows.T @ d_q
    return GeneratorGrad(dW_g, dW_a, d_e, d_z)


# --- edge generation ------------------------------------------------------------


@dataclass
class AugmentationResult:
    """Added edges and their blended scores."""

    pairs: np.ndarray
    scores: np.ndarray

    @property
    def count(self) -> int:
        return len(self.scores)

    @property
    def mean_score(self) -> float:
        return float(self.scores.mean()) if self.count else 0.0

    def summary(self) -> str:
        return f"added {self.count} edges, mean score {self.mean_score:.4f}"

    def write_report(self, path: str | Path, header: str | None = None) -> None:
        """TSV ``user<TAB>item<TAB>score`` with a trailing summary comment."""
        lines = [header] if header else []
        lines.extend(f"{u}\t{i}\t{s:.6f}" for (u, i), s in zip(self.pairs.tolist(), self.scores.tolist()))
        lines.append(f"# {self.summary()}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def score_block(observed: sp.csr_matrix, users: np.ndarray, e_items: np.ndarray, z_items: np.ndarray,
                p: AugmentParams, alpha: float) -> np.ndarray:
    """Dense blended scores for a block of users against every item."""
    rows = observed[users]
    s1 = expit(np.asarray(rows @ e_items) @ p.W_g @ e_items.T) if alpha > 0 else 0.0
    s2 = expit(np.asarray(rows @ z_items) @ p.W_a @ z_items.T) if alpha < 1 else 0.0
    return blend(s1, s2, alpha) * np.ones((len(users), e_items.shape[0]))


def generate_augmentation(observed: sp.csr_matrix, e_items: np.ndarray, z_items: np.ndarray, p: AugmentParams,
                          cfg: AugmentConfig, users=None, items=None) -> AugmentationResult:
    """Score each user's top unobserved candidates in blocks and keep those above the threshold.

    ``observed`` is the M×N observed biadjacency; ``items`` restricts the candidate pool.
    Users with no observed neighbours are skipped.
    """
    if not cfg.enabled:
        return AugmentationResult(np.zeros((0, 2), dtype=np.int64), np.zeros(0))
    observed = sp.csr_matrix(observed)
    users = np.arange(observed.shape[0]) if users is None else np.asarray(users, dtype=np.int64)
    users = users[np.diff(observed.indptr)[users] > 0]
    allowed = np.zeros(observed.shape[1], dtype=bool)
    allowed[np.arange(observed.shape[1]) if items is None else np.asarray(items, dtype=np.int64)] = True
    alpha = cfg.effective_alpha

    found_pairs, found_scores = [], []
    for start in range(0, len(users), _BLOCK):
        block = users[start : start + _BLOCK]
        scores = score_block(observed, block, e_items, z_items, p, alpha)
        scores[:, ~allowed] = -np.inf
        r, c = observed[block].nonzero()
        scores[r, c] = -np.inf
        top = min(cfg.top_items, scores.shape[1])
        if top < scores.shape[1]:
            cand = np.argpartition(-scores, top - 1, axis=1)[:, :top]
        else:
            cand = np.broadcast_to(np.arange(scores.shape[1]), scores.shape)
        cand_scores = np.take_along_axis(scores, cand, axis=1)
        block_users = np.broadcast_to(block[:, None], cand.shape)
        edges = threshold_edges(block_users.ravel(), cand.ravel(), cand_scores.ravel(), cfg.t)
        if len(edges):
            found_pairs.append(edges)
            found_scores.append(cand_scores.ravel()[cand_scores.ravel() > cfg.t])

    if not found_pairs:
        result = AugmentationResult(np.zeros((0, 2), dtype=np.int64), np.zeros(0))
    else:
        pairs = np.concatenate(found_pairs)
        scores = np.concatenate(found_scores)
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        result = AugmentationResult(pairs[order], scores[order])
    logger.info("augmentation (%s, alpha=%.2f, t=%.2f): %s", cfg.mode, alpha, cfg.t, result.summary())
    return result

"""Matrix factorisation trained with BPR: the reference point for the meta-learned model."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from coldstart_lab.autoencoder import xavier_uniform
from coldstart_lab.dataset import ImplicitMatrix
from coldstart_lab.errors import DataError, NumericError
from coldstart_lab.model import sample_bpr_triples, softplus

logger = logging.getLogger(__name__)

_BATCH = 1024


@dataclass
class MfParams:
    user_emb: np.ndarray
    item_emb: np.ndarray

    @classmethod
    def init(cls, n_users: int, n_items: int, d: int = 64, seed: int = 0) -> MfParams:
        rng = np.random.default_rng([seed, 50])
        return cls(xavier_uniform(rng, n_users, d), xavier_uniform(rng, n_items, d))

    def copy(self) -> MfParams:
        return MfParams(self.user_emb.copy(), self.item_emb.copy())

    def tensors(self) -> dict[str, np.ndarray]:
        return {"mf/user": self.user_emb, "mf/item": self.item_emb}

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> MfParams:
        try:
            user, item = tensors["mf/user"], tensors["mf/item"]
            return cls(np.asarray(user, dtype=np.float64), np.asarray(item, dtype=np.float64))
        except KeyError as exc:
            raise DataError(f"baseline tensor missing: {exc.args[0]}") from None

    def reinit_rows(self, users, items, seed: int) -> MfParams:
        rng = np.random.default_rng([seed, 51])
        out = self.copy()
        fresh_u = xavier_uniform(rng, *out.user_emb.shape)
        fresh_i = xavier_uniform(rng, *out.item_emb.shape)
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        out.user_emb[users] = fresh_u[users]
        out.item_emb[items] = fresh_i[items]
        return out


def mf_loss(p: MfParams, triples: np.ndarray, reg: float = 0.0) -> float:
    """Σ softplus(−(ŷ_ui − ŷ_uj)) plus reg times the squared norm of the rows the triples touch."""
    u, i, j = np.asarray(triples, dtype=np.int64).reshape(-1, 3).T
    margin = np.einsum("nd,nd->n", p.user_emb[u], p.item_emb[i] - p.item_emb[j])
    users = np.unique(u)
    items = np.unique(np.concatenate([i, j]))
    penalty = float(np.sum(p.user_emb[users] ** 2) + np.sum(p.item_emb[items] ** 2))
    return float(np.sum(softplus(-margin))) + reg * penalty


def mf_gradients(p: MfParams, triples: np.ndarray, reg: float = 0.0) -> tuple[float, MfParams]:
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if len(triples) == 0:
        raise DataError("BPR loss needs at least one triple")
    u, i, j = triples.T
    margin = np.einsum("nd,nd->n", p.user_emb[u], p.item_emb[i] - p.item_emb[j])
    g = -expit(-margin)[:, None]
    d_user = np.zeros_like(p.user_emb)
    d_item = np.zeros_like(p.item_emb)
    np.add.at(d_user, u, g * (p.item_emb[i] - p.item_emb[j]))
    np.add.at(d_item, i, g * p.user_emb[u])
    np.add.at(d_item, j, -g * p.user_emb[u])
    users = np.unique(u)
    items = np.unique(np.concatenate([i, j]))
    d_user[users] += 2.0 * reg * p.user_emb[users]
    d_item[items] += 2.0 * reg * p.item_emb[items]
    return mf_loss(p, triples, reg), MfParams(d_user, d_item)


def _sgd(p: MfParams, triples: np.ndarray, lr: float, reg: float) -> tuple[MfParams, float]:
    loss, grad = mf_gradients(p, triples, reg)
    if not math.isfinite(loss):
        raise NumericError("baseline loss is not finite", {"loss": loss, "lr": lr})
    return MfParams(p.user_emb - lr * grad.user_emb, p.item_emb - lr * grad.item_emb), loss


def mf_train(meta_train: ImplicitMatrix, d: int = 64, lr: float = 0.05, epochs: int = 50, seed: int = 0,
             reg: float = 1e-4, pool: np.ndarray | None = None) -> MfParams:
    """Mini-batch SGD on BPR triples resampled every epoch (one negative per positive)."""
    if meta_train.nnz == 0:
        raise DataError("cannot train the baseline on an empty matrix")
    params = MfParams.init(meta_train.n_users, meta_train.n_items, d, seed)
    pool = np.arange(meta_train.n_items) if pool is None else np.asarray(pool, dtype=np.int64)
    users = meta_train.users_with_positives()
    for epoch in range(epochs):
        rng = np.random.default_rng([seed, 52, epoch])
        triples = sample_bpr_triples(meta_train, users, pool, rng)
        triples = triples[rng.permutation(len(triples))]
        total = 0.0
        for start in range(0, len(triples), _BATCH):
            params, loss = _sgd(params, triples[start : start + _BATCH], lr, reg)
            total += loss
        logger.debug("baseline epoch %d: loss %.4f", epoch, total)
    return params


def mf_finetune(params: MfParams, support: ImplicitMatrix, lr: float = 0.05, steps: int = 20, seed: int = 0,
                reg: float = 1e-4, pool: np.ndarray | None = None) -> MfParams:
    """Full-batch BPR steps on the meta-test support set only."""
    if steps == 0 or lr == 0 or support.nnz == 0:
        return params.copy()
    pool = np.arange(support.n_items) if pool is None else np.asarray(pool, dtype=np.int64)
    users = support.users_with_positives()
    for step in range(steps):
        triples = sample_bpr_triples(support, users, pool, np.random.default_rng([seed, 53, step]))
        if len(triples) == 0:
            break
        params, _ = _sgd(params, triples, lr, reg)
    return params


def mf_scorer(params: MfParams) -> Callable[[np.ndarray], np.ndarray]:
    def score(users: np.ndarray) -> np.ndarray:
        return params.user_emb[np.asarray(users, dtype=np.int64)] @ params.item_emb.T

    return score

"""Trainable parameters, the joint objective and its hand-derived gradients."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, logsumexp

from coldstart_lab.augment import (
    AugmentParams,
    GeneratorCells,
    GeneratorPass,
    generator_backward,
    generator_forward,
    sample_generator_cells,
)
from coldstart_lab.autoencoder import AutoencoderParams, encode, encoder_backward, xavier_uniform
from coldstart_lab.dataset import ImplicitMatrix
from coldstart_lab.errors import DataError, NumericError
from coldstart_lab.graph import BipartiteGraph, final_embedding, propagate, propagate_adjoint

logger = logging.getLogger(__name__)

USER_EMB = "emb/user"
ITEM_EMB = "emb/item"
W_G = "aug/Wg"
W_A = "aug/Wa"
AE_PREFIXES = ("ae_user", "ae_item")
_ENCODER = ("W1", "b1")


@dataclass
class ModelParams:
    """Named tensors θ; names in ``frozen`` never move during training."""

    tensors: dict[str, np.ndarray]
    frozen: frozenset[str] = frozenset()

    @classmethod
    def init(cls, n_users: int, n_items: int, d: int, ae_user: AutoencoderParams, ae_item: AutoencoderParams,
             seed: int = 0, finetune_ae: bool = False) -> ModelParams:
        rng = np.random.default_rng([seed, 10])
        aug = AugmentParams.init(d, ae_user.d_z, rng)
        if ae_item.d_z != ae_user.d_z:
            raise DataError(f"user and item latent widths differ: {ae_user.d_z} vs {ae_item.d_z}")
        tensors = {
            USER_EMB: xavier_uniform(rng, n_users, d),
            ITEM_EMB: xavier_uniform(rng, n_items, d),
            W_G: aug.W_g,
            W_A: aug.W_a,
        }
        tensors.update(ae_user.copy().tensors("ae_user"))
        tensors.update(ae_item.copy().tensors("ae_item"))
        frozen = set()
        for prefix in AE_PREFIXES:
            names = ("W2", "b2") if finetune_ae else ("W1", "b1", "W2", "b2")
            frozen.update(f"{prefix}/{n}" for n in names)
        return cls(tensors, frozenset(frozen))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @property
    def trainable(self) -> list[str]:
        return [n for n in self.tensors if n not in self.frozen]

    @property
    def aug(self) -> AugmentParams:
        return AugmentParams(self.tensors[W_G], self.tensors[W_A])

    def ae(self, prefix: str) -> AutoencoderParams:
        return AutoencoderParams.from_tensors(self.tensors, prefix)

    def clone(self) -> ModelParams:
        return ModelParams({n: t.copy() for n, t in self.tensors.items()}, self.frozen)

    def axpy(self, grad: GradientBundle, scale: float) -> ModelParams:
        """θ − scale · g on trainable tensors; a new object, ``self`` untouched."""
        out = {}
        for name, tensor in self.tensors.items():
            g = grad.tensors.get(name)
            out[name] = tensor - scale * g if g is not None and name not in self.frozen else tensor.copy()
        return ModelParams(out, self.frozen)

    def max_abs(self) -> float:
        return max((float(np.max(np.abs(self.tensors[n]))) for n in self.trainable if self.tensors[n].size),
                   default=0.0)

    def reinit_rows(self, name: str, rows, rng: np.random.Generator) -> ModelParams:
        """Fresh Xavier-range rows for entities the parameters have never been trained on."""
        rows = np.asarray(rows, dtype=np.int64)
        out = self.clone()
        table = out.tensors[name]
        if rows.size:
            table[rows] = xavier_uniform(rng, table.shape[0], table.shape[1])[rows]
        return out

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors.values())


@dataclass
class GradientBundle:
    """One gradient tensor per trainable tensor; embedding rows outside the batch's reach are zero."""

    tensors: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: ModelParams) -> GradientBundle:
        return cls({n: np.zeros_like(params.tensors[n]) for n in params.trainable})

    def norm(self) -> float:
        return math.sqrt(sum(float(np.sum(g * g)) for g in self.tensors.values()))

    def scaled(self, factor: float) -> GradientBundle:
        return GradientBundle({n: factor * g for n, g in self.tensors.items()})

    def __add__(self, other: GradientBundle) -> GradientBundle:
        out = {n: g.copy() for n, g in self.tensors.items()}
        for n, g in other.tensors.items():
            out[n] = out[n] + g if n in out else g.copy()
        return GradientBundle(out)

    def __sub__(self, other: GradientBundle) -> GradientBundle:
        return self + other.scaled(-1.0)

    def touched_rows(self, name: str) -> np.ndarray:
        g = self.tensors[name]
        return np.flatnonzero(np.any(g.reshape(g.shape[0], -1) != 0, axis=1))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.tensors.values())


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.1
    lambda2: float = 0.1
    lambda3: float = 0.01
    tau: float = 0.2

    def __post_init__(self) -> None:
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise DataError("loss weights must be non-negative")
        if self.tau <= 0:
            raise DataError(f"temperature must be positive, got {self.tau}")


@dataclass
class LossBreakdown:
    pre: float
    gen: float
    mi: float
    reg: float
    total: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class ObjectiveOptions:
    n_layers: int = 3
    layer_combine: str = "last"
    gen_alpha: float = 0.8
    denominator: str = "negatives"
    gen_grad: str = "full"
    finetune_ae: bool = False


# --- scoring primitives ---------------------------------------------------------


def predict(f_u: np.ndarray, f_i: np.ndarray) -> float:
    """Inner-product preference f_uᵀ f_i."""
    f_u = np.asarray(f_u, dtype=np.float64)
    f_i = np.asarray(f_i, dtype=np.float64)
    if f_u.shape != f_i.shape:
        raise DataError(f"cannot score vectors of shapes {f_u.shape} and {f_i.shape}")
    return float(f_u @ f_i)


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def bpr_loss(triples: np.ndarray, f_user: np.ndarray, f_item: np.ndarray) -> float:
    """Σ −log σ(ŷ_ui − ŷ_uj) over (u, i⁺, j⁻) triples."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if len(triples) == 0:
        raise DataError("BPR loss needs at least one triple")
    u, i, j = triples.T
    margin = np.einsum("nd,nd->n", f_user[u], f_item[i] - f_item[j])
    return float(np.sum(softplus(-margin)))


def _unit_rows(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(z, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return np.where(norms[:, None] > 0, z / safe[:, None], 0.0), norms


def contrastive_terms(z: np.ndarray, labels: np.ndarray, positives: np.ndarray, tau: float,
                      denominator: str = "negatives") -> tuple[float, np.ndarray, int]:
    """Loss, gradient w.r.t. ``z`` and the number of anchors used.

    Row ``a`` is an anchor when ``positives[a] >= 0`` and some row carries a different
    label. Similarity is cosine; a zero row has similarity 0 with everything.
    """
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    positives = np.asarray(positives, dtype=np.int64)
    unit, norms = _unit_rows(z)
    sims = unit @ unit.T
    negative = labels[:, None] != labels[None, :]
    anchors = np.flatnonzero((positives >= 0) & negative.any(axis=1))
    if anchors.size == 0:
        return 0.0, np.zeros_like(z), 0

    logits = sims[anchors] / tau
    mask = negative[anchors].copy()
    pos = positives[anchors]
    if denominator == "with-positive":
        mask[np.arange(anchors.size), pos] = True
    masked = np.where(mask, logits, -np.inf)
    log_den = logsumexp(masked, axis=1)
    loss = float(np.sum(log_den - logits[np.arange(anchors.size), pos]))

    weights = np.where(mask, np.exp(masked - log_den[:, None]), 0.0)
    d_sims = np.zeros_like(sims)
    d_sims[anchors] = weights / tau
    d_sims[anchors, pos] -= 1.0 / tau
    d_unit = d_sims @ unit + d_sims.T @ unit
    radial = np.einsum("nd,nd->n", unit, d_unit)
    safe = np.where(norms > 0, norms, 1.0)
    d_z = np.where(norms[:, None] > 0, (d_unit - unit * radial[:, None]) / safe[:, None], 0.0)
    return loss, d_z, int(anchors.size)


def contrastive_loss(z: np.ndarray, labels: np.ndarray, tau: float, positives: np.ndarray | None = None,
                     rng: np.random.Generator | None = None, denominator: str = "negatives") -> float:
    """Task-wise contrastive loss over an in-batch table of attribute embeddings.

    Without explicit ``positives`` one same-label partner is drawn uniformly per anchor.
    """
    labels = np.asarray(labels)
    if positives is None:
        positives = draw_positives(labels, rng or np.random.default_rng(0))
    loss, _, used = contrastive_terms(z, labels, positives, tau, denominator)
    if used == 0:
        logger.warning("contrastive batch has no anchor with both a positive and a negative")
    return loss


def draw_positives(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Index of one uniformly chosen same-label partner per row, or -1 when there is none."""
    labels = np.asarray(labels)
    out = np.full(len(labels), -1, dtype=np.int64)
    for a in range(len(labels)):
        same = np.flatnonzero(labels == labels[a])
        same = same[same != a]
        if same.size:
            out[a] = rng.choice(same)
    return out


# --- task batches ---------------------------------------------------------------


@dataclass
class TaskBatch:
    """All sampled quantities of one loss evaluation, so the loss is a pure function of θ."""

    triples: np.ndarray
    cells: GeneratorCells
    cl_users: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    cl_labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    cl_positives: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def is_empty(self) -> bool:
        return len(self.triples) == 0


def sample_bpr_triples(interactions: ImplicitMatrix, users, pool: np.ndarray, rng: np.random.Generator,
                       exclude: sp.csr_matrix | None = None) -> np.ndarray:
    """One (u, i⁺, j⁻) per positive; j⁻ uniform over ``pool`` minus the user's known items."""
    pool = np.asarray(pool, dtype=np.int64)
    out = []
    for u in np.asarray(users, dtype=np.int64):
        pos = interactions.row(u)
        if pos.size == 0:
            continue
        known = pos
        if exclude is not None:
            known = np.union1d(pos, exclude.indices[exclude.indptr[u] : exclude.indptr[u + 1]])
        allowed = pool[~np.isin(pool, known)]
        if allowed.size == 0:
            continue
        neg = rng.choice(allowed, size=pos.size, replace=True)
        out.append(np.stack([np.full(pos.size, u), pos, neg], axis=1))
    return np.concatenate(out).astype(np.int64) if out else np.zeros((0, 3), dtype=np.int64)


def sample_task_batch(interactions: ImplicitMatrix, users, graph: BipartiteGraph, pool: np.ndarray,
                      rng: np.random.Generator, neg_per_pos: int = 4, cluster_labels: np.ndarray | None = None,
                      contrastive_batch: int = 512) -> TaskBatch:
    """Sample BPR triples, generator cells and the contrastive batch for ``users``.

    The contrastive batch holds the task's users plus as many users from other clusters,
    capped at ``contrastive_batch`` in total; ``cluster_labels`` is −1 for unclustered users.
    """
    users = np.asarray(users, dtype=np.int64)
    observed = graph.observed_user_item
    triples = sample_bpr_triples(interactions, users, pool, rng, observed)
    cells = sample_generator_cells(observed, users, neg_per_pos, rng, pool)
    if cluster_labels is None or len(users) == 0:
        return TaskBatch(triples, cells)

    cluster_labels = np.asarray(cluster_labels, dtype=np.int64)
    own = users[cluster_labels[users] >= 0]
    half = max(1, contrastive_batch // 2)
    if own.size > half:
        own = rng.choice(own, size=half, replace=False)
    others = np.flatnonzero(cluster_labels >= 0)
    others = others[~np.isin(others, users)]
    if others.size > contrastive_batch - own.size:
        others = rng.choice(others, size=contrastive_batch - own.size, replace=False)
    cl_users = np.concatenate([np.sort(own), np.sort(others)]).astype(np.int64)
    labels = cluster_labels[cl_users]
    positives = draw_positives(labels, rng)
    positives[own.size :] = -1
    return TaskBatch(triples, cells, cl_users, labels, positives)


# --- objective ------------------------------------------------------------------


@dataclass
class _Forward:
    e0: np.ndarray
    fused_user: np.ndarray
    fused_item: np.ndarray
    z_user: np.ndarray
    z_item: np.ndarray
    margin: np.ndarray
    gen: GeneratorPass | None
    mi_grad: np.ndarray
    reg_users: np.ndarray
    reg_items: np.ndarray
    breakdown: LossBreakdown


class TmagObjective:
    """L = L_pre + λ1·L_gen + λ2·L_MI + λ3·‖Θ‖² over a fixed graph and attribute tables."""

    def __init__(self, graph: BipartiteGraph, x_user: np.ndarray, x_item: np.ndarray,
                 weights: LossWeights | None = None, options: ObjectiveOptions | None = None):
        self.graph = graph
        self.x_user = np.asarray(x_user, dtype=np.float64)
        self.x_item = np.asarray(x_item, dtype=np.float64)
        self.weights = weights or LossWeights()
        self.options = options or ObjectiveOptions()
        self._latent: tuple[np.ndarray, np.ndarray] | None = None
        self._warned = False
        if self.x_user.shape[0] != graph.n_users or self.x_item.shape[0] != graph.n_items:
            raise DataError("attribute tables do not cover every graph node")

    def with_graph(self, graph: BipartiteGraph) -> TmagObjective:
        other = TmagObjective(graph, self.x_user, self.x_item, self.weights, self.options)
        other._latent = self._latent
        other._warned = self._warned
        return other

    def latent(self, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
        """Encoded user and item attributes; cached while the encoders are frozen."""
        if self.options.finetune_ae or self._latent is None:
            z = (encode(params.ae("ae_user"), self.x_user), encode(params.ae("ae_item"), self.x_item))
            if self.options.finetune_ae:
                return z
            self._latent = z
        return self._latent

    def propagated(self, params: ModelParams) -> np.ndarray:
        """Combined propagated table e^(L), users stacked above items."""
        e0 = np.vstack([params[USER_EMB], params[ITEM_EMB]])
        return propagate(self.graph, e0, self.options.n_layers).combined(self.options.layer_combine)

    def fused(self, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
        """Fused user and item tables f = e^(L) ⊕ z."""
        combined = self.propagated(params)
        z_user, z_item = self.latent(params)
        n = self.graph.n_users
        return final_embedding(combined[:n], z_user), final_embedding(combined[n:], z_item)

    def _forward(self, params: ModelParams, batch: TaskBatch) -> _Forward:
        w, opt = self.weights, self.options
        n = self.graph.n_users
        e0 = np.vstack([params[USER_EMB], params[ITEM_EMB]])
        combined = propagate(self.graph, e0, opt.n_layers).combined(opt.layer_combine)
        z_user, z_item = self.latent(params)
        fused_user = final_embedding(combined[:n], z_user)
        fused_item = final_embedding(combined[n:], z_item)

        margin = np.zeros(0)
        pre = 0.0
        if len(batch.triples):
            u, i, j = batch.triples.T
            margin = np.einsum("nd,nd->n", fused_user[u], fused_item[i] - fused_item[j])
            pre = float(np.sum(softplus(-margin)))

        gen_pass, gen = None, 0.0
        if len(batch.cells):
            gen_pass = generator_forward(self.graph.observed_user_item, combined[n:], z_item, params.aug,
                                         opt.gen_alpha, batch.cells)
            gen = gen_pass.loss

        mi, mi_grad = 0.0, np.zeros((0, z_user.shape[1]))
        if len(batch.cl_users):
            mi, mi_grad, used = contrastive_terms(z_user[batch.cl_users], batch.cl_labels, batch.cl_positives,
                                                  w.tau, opt.denominator)
            if used == 0 and not self._warned:
                logger.warning("contrastive batch has no anchor with both a positive and a negative")
                self._warned = True

        reg_users = np.unique(np.concatenate([batch.triples[:, 0], batch.cells.users])).astype(np.int64)
        reg_items = np.unique(np.concatenate([batch.triples[:, 1], batch.triples[:, 2],
                                              batch.cells.items])).astype(np.int64)
        reg = float(np.sum(params[USER_EMB][reg_users] ** 2) + np.sum(params[ITEM_EMB][reg_items] ** 2))
        reg += float(np.sum(params[W_G] ** 2) + np.sum(params[W_A] ** 2))
        if opt.finetune_ae:
            for prefix in AE_PREFIXES:
                reg += sum(float(np.sum(params[f"{prefix}/{n_}"] ** 2)) for n_ in _ENCODER)

        total = pre + w.lambda1 * gen + w.lambda2 * mi + w.lambda3 * reg
        breakdown = LossBreakdown(pre, gen, mi, reg, total)
        if not math.isfinite(total):
            raise NumericError("objective is not finite", breakdown.to_dict())
        return _Forward(e0, fused_user, fused_item, z_user, z_item, margin, gen_pass, mi_grad,
                        reg_users, reg_items, breakdown)

    def total_loss(self, params: ModelParams, batch: TaskBatch) -> LossBreakdown:
        return self._forward(params, batch).breakdown

    def gradients(self, params: ModelParams, batch: TaskBatch) -> tuple[LossBreakdown, GradientBundle]:
        """Loss breakdown and the analytic gradient w.r.t. every trainable tensor."""
        w, opt = self.weights, self.options
        fw = self._forward(params, batch)
        n, d = self.graph.n_users, params[USER_EMB].shape[1]

        d_fu = np.zeros_like(fw.fused_user)
        d_fi = np.zeros_like(fw.fused_item)
        if len(batch.triples):
            u, i, j = batch.triples.T
            g = -expit(-fw.margin)[:, None]
            np.add.at(d_fu, u, g * (fw.fused_item[i] - fw.fused_item[j]))
            np.add.at(d_fi, i, g * fw.fused_user[u])
            np.add.at(d_fi, j, -g * fw.fused_user[u])
        d_e = np.vstack([d_fu[:, :d], d_fi[:, :d]])
        d_zu = d_fu[:, d:]
        d_zi = d_fi[:, d:]

        d_wg = np.zeros_like(params[W_G])
        d_wa = np.zeros_like(params[W_A])
        if fw.gen is not None and w.lambda1 > 0:
            gg = generator_backward(fw.gen, params.aug, self.graph.n_items, scale=w.lambda1)
            d_wg += gg.W_g
            d_wa += gg.W_a
            if opt.gen_grad == "full":
                d_e[n:] += gg.e_items
                d_zi = d_zi + gg.z_items
        if len(batch.cl_users) and w.lambda2 > 0:
            np.add.at(d_zu, batch.cl_users, w.lambda2 * fw.mi_grad)

        d_e0 = propagate_adjoint(self.graph, d_e, opt.n_layers, opt.layer_combine)
        two_l3 = 2.0 * w.lambda3
        d_e0[fw.reg_users] += two_l3 * fw.e0[fw.reg_users]
        d_e0[n + fw.reg_items] += two_l3 * fw.e0[n + fw.reg_items]

        grads = {USER_EMB: d_e0[:n], ITEM_EMB: d_e0[n:], W_G: d_wg + two_l3 * params[W_G],
                 W_A: d_wa + two_l3 * params[W_A]}
        if opt.finetune_ae:
            for prefix, x, dz in (("ae_user", self.x_user, d_zu), ("ae_item", self.x_item, d_zi)):
                dW1, db1 = encoder_backward(params.ae(prefix), x, dz)
                grads[f"{prefix}/W1"] = dW1 + two_l3 * params[f"{prefix}/W1"]
                grads[f"{prefix}/b1"] = db1 + two_l3 * params[f"{prefix}/b1"]
        bundle = GradientBundle({k: v for k, v in grads.items() if k in params.tensors and k not in params.frozen})
        if not bundle.is_finite():
            raise NumericError("gradient is not finite", fw.breakdown.to_dict())
        return fw.breakdown, bundle

    def hvp(self, params: ModelParams, batch: TaskBatch, v: GradientBundle, eps: float = 0.0) -> GradientBundle:
        return central_difference_hvp(self, params, batch, v, eps)


def central_difference_hvp(objective, params: ModelParams, batch, v: GradientBundle,
                           eps: float = 0.0) -> GradientBundle:
    """H·v ≈ ‖v‖ (∇L(θ + εv̂) − ∇L(θ − εv̂)) / 2ε with v̂ = v/‖v‖.

    ``eps = 0`` selects 1e−3 · (1 + ‖θ‖∞).
    """
    norm = v.norm()
    if norm == 0.0:
        return GradientBundle({k: np.zeros_like(g) for k, g in v.tensors.items()})
    if eps <= 0:
        eps = 1e-3 * (1.0 + params.max_abs())
    direction = v.scaled(1.0 / norm)
    _, g_plus = objective.gradients(params.axpy(direction, -eps), batch)
    _, g_minus = objective.gradients(params.axpy(direction, eps), batch)
    return (g_plus - g_minus).scaled(norm / (2.0 * eps))

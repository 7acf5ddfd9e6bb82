"""User-item bipartite graph and light graph convolution."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from coldstart_lab.dataset import ImplicitMatrix
from coldstart_lab.errors import DataError

OBSERVED = 1
AUGMENTED = 2


@dataclass(eq=False)
class BipartiteGraph:
    """CSR adjacency over M user nodes followed by N item nodes.

    ``interactions`` is the M×N biadjacency holding the provenance code of each
    edge (1 observed, 2 augmented). The graph is immutable once built.
    """

    n_users: int
    n_items: int
    interactions: sp.csr_matrix

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    @cached_property
    def user_item(self) -> sp.csr_matrix:
        """Binary M×N biadjacency (A)."""
        a = self.interactions.copy()
        a.data = np.ones_like(a.data, dtype=np.float64)
        return a.astype(np.float64)

    @cached_property
    def observed_user_item(self) -> sp.csr_matrix:
        """Binary M×N biadjacency of observed edges only; the generator's neighbour sets."""
        a = self.interactions.copy()
        a.data = (a.data == OBSERVED).astype(np.float64)
        a.eliminate_zeros()
        return a

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Symmetric (M+N)×(M+N) adjacency with no user-user or item-item blocks."""
        a = self.user_item
        return sp.bmat([[None, a], [a.T, None]], format="csr",
                       dtype=np.float64) if self.n_nodes else sp.csr_matrix((0, 0))

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr).astype(np.float64)

    @cached_property
    def normalized(self) -> sp.csr_matrix:
        """D^-1/2 A D^-1/2; zero-degree rows and columns stay zero."""
        with np.errstate(divide="ignore"):
            inv_sqrt = np.where(self.degrees > 0, 1.0 / np.sqrt(self.degrees), 0.0)
        d = sp.diags(inv_sqrt)
        return (d @ self.adjacency @ d).tocsr()

    @property
    def n_edges(self) -> int:
        return self.interactions.nnz

    def user_degrees(self) -> np.ndarray:
        return self.degrees[: self.n_users]

    def neighbors(self, user: int) -> np.ndarray:
        ui = self.interactions
        return ui.indices[ui.indptr[user] : ui.indptr[user + 1]]

    def provenance(self, user: int, item: int) -> int:
        return int(self.interactions[user, item])

    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        coo = self.interactions.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order], coo.col[order], coo.data[order].astype(np.int64)

    def restrict_users(self, users) -> BipartiteGraph:
        """Subgraph keeping only the edges of ``users`` (node set unchanged)."""
        mask = np.zeros(self.n_users)
        mask[np.asarray(users, dtype=np.int64)] = 1.0
        kept = (sp.diags(mask) @ self.interactions).tocsr()
        kept.eliminate_zeros()
        return BipartiteGraph(self.n_users, self.n_items, kept)

    def observed(self) -> ImplicitMatrix:
        users, items, prov = self.edges()
        keep = prov == OBSERVED
        return ImplicitMatrix.from_pairs(users[keep], items[keep], self.n_users, self.n_items)

    def export_edges(self, path: str | Path, header: str | None = None) -> None:
        """Write `user<TAB>item<TAB>provenance` lines."""
        users, items, prov = self.edges()
        names = np.where(prov == OBSERVED, "observed", "augmented")
        lines = [header] if header else []
        lines.extend(f"{u}\t{i}\t{n}" for u, i, n in zip(users.tolist(), items.tolist(), names.tolist()))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def build_graph(m: ImplicitMatrix, augmented: np.ndarray | None = None) -> BipartiteGraph:
    """Observed edges plus optional augmented (user, item) pairs.

    An augmented pair duplicating an observed edge is stored once, as observed.
    """
    observed = m.matrix.copy()
    observed.data = np.full(observed.nnz, OBSERVED, dtype=np.float64)
    if augmented is not None and len(augmented):
        pairs = np.asarray(augmented, dtype=np.int64).reshape(-1, 2)
        if pairs.min() < 0 or pairs[:, 0].max() >= m.n_users or pairs[:, 1].max() >= m.n_items:
            raise DataError("augmented edge out of bounds")
        extra = sp.csr_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=observed.shape)
        extra.data[:] = 1.0
        extra = extra - extra.multiply(observed > 0)
        extra.eliminate_zeros()
        extra.data = np.full(extra.nnz, AUGMENTED, dtype=np.float64)
        observed = observed + extra
    observed = sp.csr_matrix(observed)
    observed.sort_indices()
    return BipartiteGraph(m.n_users, m.n_items, observed)


@dataclass
class EmbeddingTable:
    """Per-layer node embeddings, users stacked above items."""

    layers: list[np.ndarray]
    n_users: int

    @property
    def L(self) -> int:
        return len(self.layers) - 1

    def user(self, layer: int = -1) -> np.ndarray:
        return self.layers[layer][: self.n_users]

    def item(self, layer: int = -1) -> np.ndarray:
        return self.layers[layer][self.n_users :]

    def combined(self, mode: str = "last") -> np.ndarray:
        """Final-layer rows, or the mean over layers 0..L when ``mode='mean'``."""
        if mode == "mean":
            return sum(self.layers) / len(self.layers)
        return self.layers[-1]


def propagate(g: BipartiteGraph, e0: np.ndarray, L: int) -> EmbeddingTable:
    """e^(l+1) = D^-1/2 A D^-1/2 e^(l): no self-loops, transform or nonlinearity."""
    if L < 0:
        raise DataError(f"layer count must be >= 0, got {L}")
    e0 = np.asarray(e0, dtype=np.float64)
    if e0.shape[0] != g.n_nodes:
        raise DataError(f"embedding table has {e0.shape[0]} rows, graph has {g.n_nodes} nodes")
    layers = [e0]
    for _ in range(L):
        layers.append(g.normalized @ layers[-1])
    return EmbeddingTable(layers, g.n_users)


def propagate_adjoint(g: BipartiteGraph, grad_final: np.ndarray, L: int, mode: str = "last") -> np.ndarray:
    """Gradient w.r.t. layer 0 given a gradient on the combined output (the operator is symmetric)."""
    if mode == "mean":
        total = grad_final / (L + 1)
        acc = total.copy()
        current = total
        for _ in range(L):
            current = g.normalized @ current
            acc = acc + current
        return acc
    current = grad_final
    for _ in range(L):
        current = g.normalized @ current
    return current


def final_embedding(e_final: np.ndarray, z: np.ndarray | None) -> np.ndarray:
    """f = e^(L) ⊕ z, row-wise when given tables."""
    if z is None:
        raise DataError("attribute embedding missing: attributes are mandatory inputs")
    e_final = np.asarray(e_final, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if e_final.shape[:-1] != z.shape[:-1]:
        raise DataError(f"cannot fuse embeddings of shapes {e_final.shape} and {z.shape}")
    return np.concatenate([e_final, z], axis=-1)

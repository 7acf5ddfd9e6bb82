"""Tests for coldstart_lab.graph module."""

from __future__ import annotations

import numpy as np
import pytest

from coldstart_lab.dataset import ImplicitMatrix
from coldstart_lab.errors import DataError
from coldstart_lab.graph import (
    AUGMENTED,
    OBSERVED,
    build_graph,
    final_embedding,
    propagate,
    propagate_adjoint,
)


def _dense_propagation(m: ImplicitMatrix, e0: np.ndarray, L: int) -> list[np.ndarray]:
    """Reference D^-1/2 A D^-1/2 propagation with dense matrices."""
    R = m.matrix.toarray()
    M, N = R.shape
    A = np.zeros((M + N, M + N))
    A[:M, M:] = R
    A[M:, :M] = R.T
    deg = A.sum(axis=1)
    inv = np.array([1 / np.sqrt(d) if d > 0 else 0.0 for d in deg])
    P = inv[:, None] * A * inv[None, :]
    layers = [e0]
    for _ in range(L):
        layers.append(P @ layers[-1])
    return layers


class TestBuildGraph:
    """Graph construction and provenance."""

    def test_single_edge_degrees(self):
        g = build_graph(ImplicitMatrix.from_pairs([0], [0], 1, 1))
        assert list(g.degrees) == [1.0, 1.0]
        assert g.n_edges == 1

    def test_augmented_duplicate_stays_observed(self):
        m = ImplicitMatrix.from_pairs([0], [0], 2, 2)
        g = build_graph(m, np.array([[0, 0], [1, 1]]))
        assert g.n_edges == 2
        assert g.provenance(0, 0) == OBSERVED
        assert g.provenance(1, 1) == AUGMENTED
        assert g.observed().pair_set() == {(0, 0)}
        assert g.observed_user_item.nnz == 1
        assert g.user_item.nnz == 2

    def test_augmented_out_of_bounds(self):
        m = ImplicitMatrix.from_pairs([0], [0], 2, 2)
        with pytest.raises(DataError):
            build_graph(m, np.array([[0, 5]]))

    def test_adjacency_is_symmetric_bipartite(self, toy_matrix):
        g = build_graph(toy_matrix)
        A = g.adjacency.toarray()
        np.testing.assert_array_equal(A, A.T)
        assert not A[:4, :4].any()
        assert not A[4:, 4:].any()

    def test_restrict_users(self, toy_matrix):
        g = build_graph(toy_matrix).restrict_users([2])
        assert g.n_nodes == 9
        assert list(g.neighbors(2)) == [0, 2, 3, 4]
        assert g.neighbors(0).size == 0

    def test_export_edges(self, tmp_path):
        m = ImplicitMatrix.from_pairs([0], [1], 2, 2)
        build_graph(m, np.array([[1, 0]])).export_edges(tmp_path / "edges.tsv", header="# config={}")
        lines = (tmp_path / "edges.tsv").read_text().splitlines()
        assert lines == ["# config={}", "0\t1\tobserved", "1\t0\taugmented"]


class TestPropagate:
    """Light graph convolution."""

    def test_single_edge_copies_item_vector(self):
        g = build_graph(ImplicitMatrix.from_pairs([0], [0], 1, 1))
        e0 = np.array([[0.0, 0.0], [3.0, -1.0]])
        table = propagate(g, e0, 1)
        np.testing.assert_allclose(table.user(1)[0], [3.0, -1.0])

    def test_isolated_node_is_zero(self):
        g = build_graph(ImplicitMatrix.from_pairs([0], [0], 2, 2))
        e0 = np.ones((4, 3))
        table = propagate(g, e0, 3)
        for layer in range(1, 4):
            assert not table.layers[layer][1].any()
            assert not table.layers[layer][3].any()

    def test_empty_graph(self):
        g = build_graph(ImplicitMatrix.from_pairs([], [], 2, 3))
        table = propagate(g, np.ones((5, 2)), 2)
        assert g.n_edges == 0
        assert not table.layers[1].any()
        assert not table.layers[2].any()

    @pytest.mark.parametrize("L", [0, 1, 3])
    def test_matches_dense_reference(self, toy_matrix, L):
        e0 = np.random.default_rng(L).normal(size=(9, 4))
        table = propagate(build_graph(toy_matrix), e0, L)
        for got, want in zip(table.layers, _dense_propagation(toy_matrix, e0, L)):
            np.testing.assert_allclose(got, want, atol=1e-12)

    def test_combined_mean(self, toy_matrix):
        e0 = np.random.default_rng(0).normal(size=(9, 2))
        table = propagate(build_graph(toy_matrix), e0, 2)
        np.testing.assert_allclose(table.combined("mean"), sum(table.layers) / 3)
        np.testing.assert_array_equal(table.combined("last"), table.layers[2])

    def test_row_mismatch(self, toy_matrix):
        with pytest.raises(DataError, match="rows"):
            propagate(build_graph(toy_matrix), np.zeros((3, 2)), 1)

    @pytest.mark.parametrize("mode", ["last", "mean"])
    def test_adjoint(self, toy_matrix, mode):
        """<G, P(e)> equals <P*(G), e> for the linear propagation map."""
        rng = np.random.default_rng(4)
        g = build_graph(toy_matrix)
        e0 = rng.normal(size=(9, 3))
        G = rng.normal(size=(9, 3))
        forward = propagate(g, e0, 2).combined(mode)
        back = propagate_adjoint(g, G, 2, mode)
        assert np.sum(G * forward) == pytest.approx(np.sum(back * e0))


class TestFinalEmbedding:
    def test_concatenation(self):
        np.testing.assert_array_equal(final_embedding(np.array([1.0, 2.0]), np.array([3.0])), [1.0, 2.0, 3.0])

    def test_tables(self):
        f = final_embedding(np.zeros((3, 2)), np.ones((3, 4)))
        assert f.shape == (3, 6)

    def test_zero_structure_keeps_attribute_signal(self):
        fu = final_embedding(np.zeros(2), np.array([1.0]))
        fi = final_embedding(np.array([0.5, 0.5]), np.array([2.0]))
        assert float(fu @ fi) == pytest.approx(2.0)

    def test_missing_attributes(self):
        with pytest.raises(DataError, match="mandatory"):
            final_embedding(np.zeros(2), None)


def _random_matrix(rng: np.random.Generator) -> ImplicitMatrix:
    M, N = int(rng.integers(1, 9)), int(rng.integers(1, 9))
    dense = rng.random((M, N)) < rng.uniform(0.1, 0.7)
    users, items = np.nonzero(dense)
    return ImplicitMatrix.from_pairs(users, items, M, N)


class TestPropagationProperties:
    """Algebraic properties of the propagation operator on random bipartite graphs."""

    def test_matches_dense_reference_random_graphs(self):
        for seed in range(30):
            rng = np.random.default_rng(seed)
            m = _random_matrix(rng)
            L = int(rng.integers(0, 5))
            e0 = rng.normal(size=(m.n_users + m.n_items, 3))
            table = propagate(build_graph(m), e0, L)
            for got, want in zip(table.layers, _dense_propagation(m, e0, L)):
                np.testing.assert_allclose(got, want, atol=1e-12)

    def test_linearity(self):
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            m = _random_matrix(rng)
            g = build_graph(m)
            e1 = rng.normal(size=(g.n_nodes, 4))
            e2 = rng.normal(size=(g.n_nodes, 4))
            a, b = rng.normal(size=2)
            for mode in ("last", "mean"):
                mixed = propagate(g, a * e1 + b * e2, 3).combined(mode)
                separate = a * propagate(g, e1, 3).combined(mode) + b * propagate(g, e2, 3).combined(mode)
                np.testing.assert_allclose(mixed, separate, atol=1e-12)

    def test_relabelling_nodes_commutes(self):
        """Permuting users and items before propagation permutes the output rows the same way."""
        for seed in range(10):
            rng = np.random.default_rng(200 + seed)
            m = _random_matrix(rng)
            M, N = m.n_users, m.n_items
            perm_u, perm_i = rng.permutation(M), rng.permutation(N)
            users, items = m.pairs()
            moved = ImplicitMatrix.from_pairs(np.argsort(perm_u)[users], np.argsort(perm_i)[items], M, N)
            nodes = np.concatenate([perm_u, M + perm_i])
            e0 = rng.normal(size=(M + N, 2))
            original = propagate(build_graph(m), e0, 2).combined("mean")
            relabelled = propagate(build_graph(moved), e0[nodes], 2).combined("mean")
            np.testing.assert_allclose(relabelled, original[nodes], atol=1e-12)

    @pytest.mark.parametrize("mode", ["last", "mean"])
    def test_adjoint_random_graphs(self, mode):
        for seed in range(15):
            rng = np.random.default_rng(300 + seed)
            g = build_graph(_random_matrix(rng))
            L = int(rng.integers(0, 4))
            x = rng.normal(size=(g.n_nodes, 3))
            y = rng.normal(size=(g.n_nodes, 3))
            forward = propagate(g, x, L).combined(mode)
            back = propagate_adjoint(g, y, L, mode)
            assert np.sum(forward * y) == pytest.approx(np.sum(x * back), abs=1e-10)

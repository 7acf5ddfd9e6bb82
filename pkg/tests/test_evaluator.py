"""Tests for coldstart_lab.evaluator module."""

from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from coldstart_lab.dataset import ImplicitMatrix
from coldstart_lab.errors import DataError
from coldstart_lab.evaluator import (
    MetricReport,
    RankedList,
    evaluate_rankings,
    evaluate_users,
    map_at_k,
    ndcg_at_k,
    rank_candidates,
    recall_at_k,
)


def _ranked(items):
    return RankedList(0, np.asarray(items), np.zeros(len(items)))


def _reference_dcg(order, relevant, k):
    return sum(1.0 / math.log2(r + 2) for r, item in enumerate(order[:k]) if item in relevant)


class TestRankCandidates:
    """Tests for top-K ranking."""

    def test_top_k(self):
        ranked = rank_candidates(np.array([0.9, 0.1, 0.5]), [0, 1, 2], [], 2)
        assert ranked.items.tolist() == [0, 2]
        assert ranked.scores.tolist() == [0.9, 0.5]

    def test_ties_prefer_lower_id(self):
        ranked = rank_candidates(np.array([0.3, 0.7, 0.7, 0.7]), [3, 2, 1, 0], [], 3)
        assert ranked.items.tolist() == [1, 2, 3]

    def test_exclusions(self):
        ranked = rank_candidates(np.array([0.9, 0.1, 0.5]), [0, 1, 2], [0], 2)
        assert ranked.items.tolist() == [2, 1]

    def test_no_candidates_left(self):
        with pytest.raises(DataError):
            rank_candidates(np.zeros(2), [0], [0], 1)

    def test_invalid_k(self):
        with pytest.raises(DataError):
            rank_candidates(np.zeros(2), [0, 1], [], 0)


class TestMetrics:
    """Recall, NDCG and MAP at K."""

    def test_recall(self):
        assert recall_at_k(_ranked([5, 6, 7]), [5, 7], 3) == 1.0
        assert recall_at_k(_ranked([5, 6, 7]), [5, 9], 3) == 0.5
        assert recall_at_k(_ranked([5, 6, 7]), [8, 9], 3) == 0.0

    def test_ndcg(self):
        assert ndcg_at_k(_ranked([5, 6, 7]), [5, 7], 3) == pytest.approx(0.9197, abs=1e-4)
        assert ndcg_at_k(_ranked([5, 7, 6]), [5, 7], 3) == pytest.approx(1.0)
        assert ndcg_at_k(_ranked([1, 2, 3]), [5, 7], 3) == 0.0

    def test_map(self):
        assert map_at_k(_ranked([5, 6, 7]), [5, 7], 3) == pytest.approx(0.8333, abs=1e-4)
        assert map_at_k(_ranked([5, 7, 6]), [5, 7], 3) == pytest.approx(1.0)
        assert map_at_k(_ranked([1, 2, 3]), [5, 7], 3) == 0.0

    def test_map_normalisation(self):
        ranked = _ranked([5, 6])
        assert map_at_k(ranked, [5, 7, 8], 2, norm="min") == pytest.approx(0.5)
        assert map_at_k(ranked, [5, 7, 8], 2, norm="relevant") == pytest.approx(1 / 3)

    def test_empty_relevant(self):
        with pytest.raises(DataError, match="empty relevant"):
            recall_at_k(_ranked([1]), [], 1)

    @pytest.mark.parametrize("relevant", [{0}, {1, 3}, {0, 2, 4}])
    def test_brute_force_reference(self, relevant):
        """Every ordering of five items against reference definitions."""
        items = list(range(5))
        k = 3
        best = max(_reference_dcg(list(p), relevant, k) for p in itertools.permutations(items))
        for perm in itertools.permutations(items):
            order = list(perm)
            ranked = _ranked(order[:k])
            hits = [item in relevant for item in order[:k]]
            precisions = [sum(hits[: r + 1]) / (r + 1) for r, h in enumerate(hits) if h]
            assert recall_at_k(ranked, sorted(relevant), k) == pytest.approx(sum(hits) / len(relevant))
            assert ndcg_at_k(ranked, sorted(relevant), k) == pytest.approx(_reference_dcg(order, relevant, k) / best)
            assert map_at_k(ranked, sorted(relevant), k) == pytest.approx(sum(precisions) / min(len(relevant), k))


class TestEvaluateUsers:
    """Per-task evaluation."""

    def test_oracle_scores(self):
        query = ImplicitMatrix.from_pairs([0] * 10 + [1] * 10, list(range(10)) + list(range(10, 20)), 2, 40)
        support = ImplicitMatrix.from_pairs([0, 1], [30, 31], 2, 40)

        def oracle(users):
            table = np.zeros((len(users), 40))
            for row, u in enumerate(users):
                table[row, query.row(u)] = np.inf
            return table

        report = evaluate_users(1, [0, 1], query, support, np.arange(40), oracle, k=10)
        assert (report.recall, report.ndcg, report.map) == (1.0, 1.0, 1.0)
        assert report.n_users == 2

    def test_random_scores_expected_recall(self):
        rng = np.random.default_rng(0)
        n_items, trials = 1000, 2000
        relevant = np.arange(10)
        recalls = []
        for _ in range(trials):
            ranked = rank_candidates(rng.random(n_items), np.arange(n_items), [], 10)
            recalls.append(recall_at_k(ranked, relevant, 10))
        sd = math.sqrt(10 * 0.01 * 0.99) / 10 / math.sqrt(trials)
        assert abs(np.mean(recalls) - 0.01) < 3 * sd

    def test_support_items_excluded(self):
        query = ImplicitMatrix.from_pairs([0], [2], 1, 4)
        support = ImplicitMatrix.from_pairs([0], [0], 1, 4)
        report = evaluate_users(1, [0], query, support, np.arange(4), lambda u: np.array([[9.0, 1.0, 2.0, 0.0]]),
                                k=1)
        assert report.rankings[0].items.tolist() == [2]
        assert report.recall == 1.0

    def test_users_without_candidate_queries_skipped(self, caplog):
        query = ImplicitMatrix.from_pairs([0], [3], 1, 4)
        support = ImplicitMatrix.from_pairs([0], [0], 1, 4)
        report = evaluate_users(2, [0], query, support, [1, 2], lambda u: np.zeros((len(u), 4)), k=2)
        assert report.n_users == 0
        assert report.to_records() == []
        assert "no user" in caplog.text

    def test_records(self):
        report = MetricReport(task=1, k=5, n_users=3, recall=0.5, ndcg=0.4, map=0.3)
        records = report.to_records()
        assert [r["metric"] for r in records] == ["recall", "ndcg", "map"]
        assert records[0] == {"task": 1, "metric": "recall", "k": 5, "value": 0.5, "n_users": 3}

    def test_evaluate_rankings_matches(self):
        query = ImplicitMatrix.from_pairs([0, 0, 1], [1, 3, 2], 2, 5)
        support = ImplicitMatrix.from_pairs([0, 1], [0, 0], 2, 5)
        table = np.random.default_rng(1).random((2, 5))
        direct = evaluate_users(3, [0, 1], query, support, np.arange(5), lambda u: table[u], k=3)
        again = evaluate_rankings(3, direct.rankings, query, k=3)
        assert again.recall == direct.recall
        assert again.map == direct.map

    @pytest.mark.parametrize("transform", [np.exp, lambda s: 3.0 * s + 1.0, np.arctan])
    def test_increasing_score_transform_changes_nothing(self, transform):
        rng = np.random.default_rng(7)
        n_users, n_items = 6, 60
        dense = rng.random((n_users, n_items)) < 0.25
        dense[:, 0] = True
        held = rng.random((n_users, n_items)) < 0.5
        query = ImplicitMatrix.from_pairs(*np.nonzero(dense & held), n_users, n_items)
        support = ImplicitMatrix.from_pairs(*np.nonzero(dense & ~held), n_users, n_items)
        table = rng.normal(size=(n_users, n_items))
        users = np.arange(n_users)
        base = evaluate_users(1, users, query, support, np.arange(n_items), lambda u: table[u], k=10)
        moved = evaluate_users(1, users, query, support, np.arange(n_items), lambda u: transform(table[u]), k=10)
        assert base.n_users == moved.n_users > 0
        for a, b in zip(base.rankings, moved.rankings):
            np.testing.assert_array_equal(a.items, b.items)
        assert moved.recall == pytest.approx(base.recall)
        assert moved.ndcg == pytest.approx(base.ndcg)
        assert moved.map == pytest.approx(base.map)

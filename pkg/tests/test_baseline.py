"""Tests for coldstart_lab.baseline module."""

from __future__ import annotations

import numpy as np
import pytest

from coldstart_lab.baseline import MfParams, mf_finetune, mf_gradients, mf_loss, mf_scorer, mf_train
from coldstart_lab.dataset import ImplicitMatrix
from coldstart_lab.errors import DataError


def _separable():
    return ImplicitMatrix.from_pairs([0, 1], [0, 1], 2, 2)


class TestMfTraining:
    """MF-BPR training and fine-tuning."""

    def test_zero_epochs_is_init(self):
        params = mf_train(_separable(), d=4, epochs=0, seed=3)
        np.testing.assert_array_equal(params.user_emb, MfParams.init(2, 2, 4, 3).user_emb)

    def test_separable_toy(self):
        params = mf_train(_separable(), d=4, lr=0.1, epochs=300, seed=0, reg=0.0)
        scores = mf_scorer(params)(np.array([0, 1]))
        assert scores[0, 0] > scores[0, 1]
        assert scores[1, 1] > scores[1, 0]

    def test_empty_matrix(self):
        with pytest.raises(DataError):
            mf_train(ImplicitMatrix.from_pairs([], [], 2, 2))

    def test_deterministic(self):
        a = mf_train(_separable(), d=4, epochs=5, seed=1)
        b = mf_train(_separable(), d=4, epochs=5, seed=1)
        np.testing.assert_array_equal(a.item_emb, b.item_emb)

    @pytest.mark.parametrize("kwargs", [{"steps": 0}, {"lr": 0.0}])
    def test_finetune_noop(self, kwargs):
        params = MfParams.init(2, 2, 4, 0)
        tuned = mf_finetune(params, _separable(), **kwargs)
        np.testing.assert_array_equal(tuned.user_emb, params.user_emb)
        assert tuned is not params

    def test_finetune_moves_support_users(self):
        params = MfParams.init(3, 2, 4, 0)
        support = ImplicitMatrix.from_pairs([0], [0], 3, 2)
        tuned = mf_finetune(params, support, lr=0.1, steps=3)
        assert not np.array_equal(tuned.user_emb[0], params.user_emb[0])
        np.testing.assert_array_equal(tuned.user_emb[2], params.user_emb[2])


class TestMfGradients:
    def test_finite_differences(self):
        rng = np.random.default_rng(0)
        params = MfParams(rng.normal(size=(3, 2)), rng.normal(size=(4, 2)))
        triples = np.array([[0, 1, 2], [1, 0, 3], [2, 3, 1]])
        _, grad = mf_gradients(params, triples, reg=0.1)
        eps = 1e-6
        for attr in ("user_emb", "item_emb"):
            base = getattr(params, attr)
            for idx in np.ndindex(base.shape):
                up, down = params.copy(), params.copy()
                getattr(up, attr)[idx] += eps
                getattr(down, attr)[idx] -= eps
                numeric = (mf_loss(up, triples, 0.1) - mf_loss(down, triples, 0.1)) / (2 * eps)
                assert getattr(grad, attr)[idx] == pytest.approx(numeric, abs=1e-6)

    def test_tensors_roundtrip(self):
        params = MfParams.init(2, 3, 4, 0)
        restored = MfParams.from_tensors(params.tensors())
        np.testing.assert_array_equal(restored.item_emb, params.item_emb)

    def test_missing_tensor(self):
        with pytest.raises(DataError, match="baseline tensor missing"):
            MfParams.from_tensors({"mf/user": np.zeros((1, 1))})

    def test_reinit_rows(self):
        params = MfParams(np.zeros((3, 2)), np.zeros((2, 2)))
        fresh = params.reinit_rows([2], [0], seed=0)
        assert fresh.user_emb[2].any()
        assert not fresh.user_emb[:2].any()
        assert not fresh.item_emb[1].any()

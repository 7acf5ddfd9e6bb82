"""Tests for coldstart_lab.autoencoder module."""

from __future__ import annotations

import numpy as np
import pytest

from coldstart_lab.autoencoder import (
    AutoencoderParams,
    ae_gradients,
    ae_loss,
    decode,
    encode,
    encoder_backward,
    train_autoencoder,
)
from coldstart_lab.errors import DataError


def _params(W1, b1, W2, b2):
    return AutoencoderParams(*(np.asarray(a, dtype=np.float64) for a in (W1, b1, W2, b2)))


def _flat(p: AutoencoderParams) -> np.ndarray:
    return np.concatenate([p.W1.ravel(), p.b1, p.W2.ravel(), p.b2])


def _unflat(vec: np.ndarray, like: AutoencoderParams) -> AutoencoderParams:
    parts, start = [], 0
    for arr in (like.W1, like.b1, like.W2, like.b2):
        parts.append(vec[start : start + arr.size].reshape(arr.shape))
        start += arr.size
    return AutoencoderParams(*parts)


class TestEncodeDecode:
    """Forward passes."""

    def test_zero_input(self):
        p = _params(np.ones((2, 3)), np.zeros(2), np.ones((3, 2)), np.zeros(3))
        assert not encode(p, np.zeros(3)).any()
        assert not decode(p, np.zeros(2)).any()

    def test_identity(self):
        p = _params(np.eye(2), np.zeros(2), np.eye(2), np.zeros(2))
        np.testing.assert_array_equal(encode(p, [1.0, 0.0]), [1.0, 0.0])
        np.testing.assert_array_equal(decode(p, [0.0, 3.0]), [0.0, 3.0])

    def test_relu_clamps(self):
        p = _params(np.eye(2), np.array([-3.0, 3.0]), np.eye(2), np.array([-1.0, 0.5]))
        np.testing.assert_array_equal(encode(p, [1.0, 0.0]), [0.0, 3.0])
        np.testing.assert_array_equal(decode(p, [0.0, 0.0]), [0.0, 0.5])

    def test_width_mismatch(self):
        p = AutoencoderParams.init(4, 2, seed=0)
        with pytest.raises(DataError, match="attribute width"):
            encode(p, np.zeros(3))


class TestLoss:
    def test_perfect_reconstruction(self):
        p = _params(np.eye(2), np.zeros(2), np.eye(2), np.zeros(2))
        assert ae_loss(p, np.array([[1.0, 2.0]]), lam=0.0) == 0.0

    def test_squared_error(self):
        p = _params(np.zeros((1, 2)), np.zeros(1), np.zeros((2, 1)), np.zeros(2))
        assert ae_loss(p, np.array([[1.0, 0.0]]), lam=0.0) == pytest.approx(1.0)

    def test_weight_penalty(self):
        W1 = np.zeros((2, 2))
        W1[0, 0] = 2.0
        p = _params(W1, np.zeros(2), np.zeros((2, 2)), np.zeros(2))
        assert ae_loss(p, np.zeros((1, 2)), lam=1.0) == pytest.approx(4.0)


class TestGradients:
    """Analytic gradients against central differences."""

    @pytest.mark.parametrize("reg_biases", [True, False])
    def test_finite_differences(self, reg_biases):
        rng = np.random.default_rng(11)
        X = rng.random((6, 4))
        p = AutoencoderParams.init(4, 3, rng)
        p.b1 = np.full(3, 0.2)
        p.b2 = np.full(4, 0.2)
        _, grad = ae_gradients(p, X, lam=0.01, reg_biases=reg_biases)

        theta = _flat(p)
        numeric = np.zeros_like(theta)
        eps = 1e-4
        for k in range(theta.size):
            up, down = theta.copy(), theta.copy()
            up[k] += eps
            down[k] -= eps
            numeric[k] = (
                ae_loss(_unflat(up, p), X, 0.01, reg_biases) - ae_loss(_unflat(down, p), X, 0.01, reg_biases)
            ) / (2 * eps)
        analytic = _flat(grad)
        assert np.linalg.norm(numeric - analytic) <= 1e-4 * np.linalg.norm(analytic)

    def test_encoder_backward_matches_full_gradient_path(self):
        rng = np.random.default_rng(2)
        X = rng.random((5, 4))
        p = AutoencoderParams.init(4, 3, rng)
        p.b1 = np.full(3, 0.1)
        d_z = rng.normal(size=(5, 3))
        dW1, db1 = encoder_backward(p, X, d_z)

        eps = 1e-6
        W1 = p.W1.copy()
        W1[1, 2] += eps
        shifted = AutoencoderParams(W1, p.b1, p.W2, p.b2)
        numeric = np.sum(d_z * (encode(shifted, X) - encode(p, X))) / eps
        assert numeric == pytest.approx(dW1[1, 2], rel=1e-4, abs=1e-8)
        assert db1.shape == (3,)


class TestTraining:
    """Full-batch training."""

    def test_loss_decreases(self):
        X = np.random.default_rng(0).random((6, 4))
        history: list[float] = []
        train_autoencoder(X, d_z=3, lam=0.0, lr=0.05, max_epochs=200, tol=0.0, seed=1, history=history)
        assert history[-1] < history[0]
        assert all(b <= a for a, b in zip(history, history[1:]))

    def test_repeated_vector_reconstructed(self):
        X = np.tile([1.0, 0.0, 1.0, 0.5], (6, 1))
        history: list[float] = []
        train_autoencoder(X, d_z=2, lam=0.0, lr=0.05, max_epochs=500, tol=0.0, seed=0, history=history)
        assert history[-1] < history[0]

    def test_deterministic(self):
        X = np.random.default_rng(3).random((8, 5))
        a = train_autoencoder(X, d_z=2, max_epochs=30, seed=9)
        b = train_autoencoder(X, d_z=2, max_epochs=30, seed=9)
        for name, arr in a.tensors().items():
            np.testing.assert_array_equal(arr, b.tensors()[name])

    def test_zero_epochs_returns_init(self):
        X = np.ones((3, 2))
        p = train_autoencoder(X, d_z=2, max_epochs=0, seed=4)
        init = AutoencoderParams.init(2, 2, 4)
        np.testing.assert_array_equal(p.W1, init.W1)

    def test_invalid_width(self):
        with pytest.raises(DataError):
            train_autoencoder(np.ones((2, 2)), d_z=0)

    def test_tensor_roundtrip(self):
        p = AutoencoderParams.init(3, 2, seed=5)
        q = AutoencoderParams.from_tensors(p.tensors("ae_user"), "ae_user")
        np.testing.assert_array_equal(q.W2, p.W2)

    def test_missing_tensor(self):
        with pytest.raises(DataError, match="missing"):
            AutoencoderParams.from_tensors({}, "ae_item")

"""Attribute autoencoder: dense latent embeddings from multi-hot content vectors."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from coldstart_lab.errors import DataError, NumericError

logger = logging.getLogger(__name__)

_MAX_HALVINGS = 40
_TOL_WINDOW = 5


def xavier_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    """Uniform in ±sqrt(6 / (fan_in + fan_out)), shape (fan_out, fan_in)."""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


@dataclass
class AutoencoderParams:
    """Encoder (W1, b1) and decoder (W2, b2) of one entity kind."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def d_x(self) -> int:
        return self.W1.shape[1]

    @property
    def d_z(self) -> int:
        return self.W1.shape[0]

    @classmethod
    def init(cls, d_x: int, d_z: int, seed: int | np.random.Generator = 0) -> AutoencoderParams:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return cls(
            W1=xavier_uniform(rng, d_z, d_x),
            b1=np.zeros(d_z),
            W2=xavier_uniform(rng, d_x, d_z),
            b2=np.zeros(d_x),
        )

    def tensors(self, prefix: str = "") -> dict[str, np.ndarray]:
        head = f"{prefix}/" if prefix else ""
        return {f"{head}W1": self.W1, f"{head}b1": self.b1, f"{head}W2": self.W2, f"{head}b2": self.b2}

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], prefix: str = "") -> AutoencoderParams:
        head = f"{prefix}/" if prefix else ""
        try:
            return cls(*(np.asarray(tensors[f"{head}{n}"], dtype=np.float64) for n in ("W1", "b1", "W2", "b2")))
        except KeyError as exc:
            raise DataError(f"autoencoder tensor missing: {exc.args[0]}") from None

    def copy(self) -> AutoencoderParams:
        return AutoencoderParams(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy())

    def step(self, grad: AutoencoderParams, lr: float) -> AutoencoderParams:
        return AutoencoderParams(self.W1 - lr * grad.W1, self.b1 - lr * grad.b1,
                                 self.W2 - lr * grad.W2, self.b2 - lr * grad.b2)

    def squared_norm(self, include_biases: bool = True) -> float:
        total = float(np.sum(self.W1**2) + np.sum(self.W2**2))
        if include_biases:
            total += float(np.sum(self.b1**2) + np.sum(self.b2**2))
        return total


def encode(p: AutoencoderParams, x: np.ndarray) -> np.ndarray:
    """z = ReLU(W1 x + b1); accepts one vector or a table of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.d_x:
        raise DataError(f"attribute width {x.shape[-1]} does not match encoder input {p.d_x}")
    return np.maximum(x @ p.W1.T + p.b1, 0.0)


def decode(p: AutoencoderParams, z: np.ndarray) -> np.ndarray:
    """x_r = ReLU(W2 z + b2)."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != p.d_z:
        raise DataError(f"latent width {z.shape[-1]} does not match decoder input {p.d_z}")
    return np.maximum(z @ p.W2.T + p.b2, 0.0)


def ae_loss(p: AutoencoderParams, X: np.ndarray, lam: float, reg_biases: bool = True) -> float:
    """Sum of squared reconstruction errors plus lam times the squared parameter norm."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    residual = X - decode(p, encode(p, X))
    return float(np.sum(residual**2)) + lam * p.squared_norm(reg_biases)


def ae_gradients(p: AutoencoderParams, X: np.ndarray, lam: float,
                 reg_biases: bool = True) -> tuple[float, AutoencoderParams]:
    """Loss and its analytic gradient; the ReLU subgradient at 0 is 0."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != p.d_x:
        raise DataError(f"attribute width {X.shape[1]} does not match encoder input {p.d_x}")
    a1 = X @ p.W1.T + p.b1
    z = np.maximum(a1, 0.0)
    a2 = z @ p.W2.T + p.b2
    xr = np.maximum(a2, 0.0)
    loss = float(np.sum((X - xr) ** 2)) + lam * p.squared_norm(reg_biases)

    d_a2 = 2.0 * (xr - X) * (a2 > 0)
    dW2 = d_a2.T @ z + 2.0 * lam * p.W2
    db2 = d_a2.sum(axis=0)
    d_a1 = (d_a2 @ p.W2) * (a1 > 0)
    dW1 = d_a1.T @ X + 2.0 * lam * p.W1
    db1 = d_a1.sum(axis=0)
    if reg_biases:
        db1 = db1 + 2.0 * lam * p.b1
        db2 = db2 + 2.0 * lam * p.b2
    return loss, AutoencoderParams(dW1, db1, dW2, db2)


def encoder_backward(p: AutoencoderParams, X: np.ndarray, d_z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pull a gradient on z = encode(p, X) back to (dW1, db1)."""
    a1 = X @ p.W1.T + p.b1
    d_a1 = d_z * (a1 > 0)
    return d_a1.T @ X, d_a1.sum(axis=0)


def train_autoencoder(
    X: np.ndarray,
    d_z: int = 64,
    lam: float = 1e-4,
    lr: float = 0.01,
    max_epochs: int = 500,
    tol: float = 1e-6,
    seed: int = 0,
    reg_biases: bool = True,
    history: list[float] | None = None,
) -> AutoencoderParams:
    """Full-batch gradient descent with step halving until the loss stops moving.

    Stops when the relative loss change over the last five epochs drops below
    ``tol``, after ``max_epochs``, or when no halved step lowers the loss.
    """
    if d_z < 1:
        raise DataError(f"latent width must be >= 1, got {d_z}")
    if lr <= 0:
        raise DataError(f"learning rate must be positive, got {lr}")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    params = AutoencoderParams.init(X.shape[1], d_z, seed)
    losses = history if history is not None else []

    loss, grad = ae_gradients(params, X, lam, reg_biases)
    if not math.isfinite(loss):
        raise NumericError("autoencoder loss is not finite at initialization", {"loss": loss, "lr": lr})
    losses.append(loss)

    for epoch in range(max_epochs):
        for _ in range(_MAX_HALVINGS):
            candidate = params.step(grad, lr)
            new_loss = ae_loss(candidate, X, lam, reg_biases)
            if math.isfinite(new_loss) and new_loss <= loss:
                break
            lr *= 0.5
            logger.debug("epoch %d: loss rose to %.6g, halving step to %.3g", epoch, new_loss, lr)
        else:
            logger.info("autoencoder stalled after %d epochs at loss %.6g", epoch, loss)
            break
        params, loss = candidate, new_loss
        losses.append(loss)
        if len(losses) > _TOL_WINDOW:
            before = losses[-1 - _TOL_WINDOW]
            if abs(before - loss) <= tol * max(abs(before), np.finfo(float).tiny):
                break
        loss, grad = ae_gradients(params, X, lam, reg_biases)
    return params

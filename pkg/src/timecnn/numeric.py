"""Dense numeric primitives with hand-written backward passes.

Every array is float64. Functions accept arrays with arbitrary leading batch
dimensions; the trailing one or two axes carry the matrix/vector semantics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy.special import erf

from .errors import ConfigError, NonFiniteError, ShapeError

DTYPE = np.float64
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator: same seed, same stream, bit for bit."""
    if seed < 0:
        raise ConfigError(f"seed must be non-negative, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def ensure_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values in {where}")
    return x


@dataclass
class GradTape:
    """Ordered record of forward ops and the intermediates backward needs."""

    records: list[tuple[str, dict[str, Any]]] = field(default_factory=list)

    def record(self, op: str, **cache: Any) -> None:
        self.records.append((op, cache))

    def replay(self):
        """Yield records in exact reverse forward order."""
        return reversed(self.records)

    def __len__(self) -> int:
        return len(self.records)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with a fixed summation order over the inner index.

    Accumulates ``a[..., :, k] * b[k, :]`` for k = 0, 1, ... so every output
    entry is the left-to-right sum a naive triple loop would produce. The
    model's dense layers use BLAS instead (see ``linear``); this is the
    reference-exact primitive.
    """
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim < 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects (..., m, k) @ (k, n), got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = np.zeros(a.shape[:-1] + (b.shape[1],), dtype=DTYPE)
    for k in range(b.shape[0]):
        out += a[..., :, k : k + 1] * b[k]
    return out


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Affine map ``x @ w + b`` over the last axis (BLAS-backed)."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input width {x.shape[-1]} != weight rows {w.shape[0]}")
    y = x @ w
    if b is not None:
        y = y + b
    return y


def linear_backward(x: np.ndarray, w: np.ndarray, upstream: np.ndarray):
    """Gradients of ``x @ w + b`` -> (dx, dw, db); leading axes are summed."""
    dx = upstream @ w.T
    x2 = x.reshape(-1, x.shape[-1])
    g2 = upstream.reshape(-1, upstream.shape[-1])
    return dx, x2.T @ g2, g2.sum(axis=0)


def gelu_forward(x: np.ndarray) -> np.ndarray:
    ensure_finite(x, "gelu input")
    return x * 0.5 * (1.0 + erf(x / _SQRT2))


def gelu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    if x.shape != upstream.shape:
        raise ShapeError(f"gelu_backward: {x.shape} vs upstream {upstream.shape}")
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return upstream * (cdf + x * pdf)


def center(x: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """Subtract the mean; constant slices come out exactly zero."""
    mu = x.mean(axis=axis, keepdims=True)
    first = np.take(x, [0], axis=axis)
    constant = np.all(x == first, axis=axis, keepdims=True)
    return np.where(constant, 0.0, x - mu), np.where(constant, first, mu)


def layer_norm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5):
    """Normalize the last axis with biased variance, then scale and shift."""
    if eps <= 0:
        raise ConfigError("layer norm eps must be positive")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer norm affine shape {gamma.shape}/{beta.shape} != ({d},)")
    centered, _ = center(x, axis=-1)
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    cache = {"xhat": xhat, "inv_std": inv_std, "gamma": gamma}
    return xhat * gamma + beta, cache


def layer_norm_backward(cache: dict, upstream: np.ndarray):
    xhat, inv_std, gamma = cache["xhat"], cache["inv_std"], cache["gamma"]
    if upstream.shape != xhat.shape:
        raise ShapeError(f"layer_norm_backward: {upstream.shape} vs cached {xhat.shape}")
    g2 = upstream.reshape(-1, upstream.shape[-1])
    dgamma = (g2 * xhat.reshape(g2.shape)).sum(axis=0)
    dbeta = g2.sum(axis=0)
    dxhat = upstream * gamma
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def dropout(x: np.ndarray, p: float, training: bool, rng: np.random.Generator | None):
    """Inverted dropout. Returns (output, keep mask of 0/1)."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout p must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x, np.ones_like(x)
    if rng is None:
        raise ConfigError("training-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= p).astype(DTYPE)
    return x * mask * (1.0 / (1.0 - p)), mask


def dropout_backward(mask: np.ndarray, p: float, upstream: np.ndarray) -> np.ndarray:
    if p == 0.0:
        return upstream
    return upstream * mask * (1.0 / (1.0 - p))


def check_gradients(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    params: np.ndarray,
    h: float = 1e-5,
) -> float:
    """Largest relative gap between central differences and the analytic gradient.

    ``fun(p)`` returns ``(value, gradient)``. The per-coordinate error is
    ``|g_fd - g| / max(1e-8, |g_fd| + |g|)``.
    """
    if h <= 0:
        raise ConfigError("finite-difference step must be positive")
    p = np.array(params, dtype=DTYPE).ravel()
    value, grad = fun(p.copy())
    if not np.isfinite(value):
        raise NonFiniteError("objective is non-finite at the base point")
    grad = np.asarray(grad, dtype=DTYPE).ravel()
    if grad.shape != p.shape:
        raise ShapeError(f"gradient has {grad.size} entries for {p.size} parameters")
    worst = 0.0
    for i in range(p.size):
        orig = p[i]
        p[i] = orig + h
        f_plus = fun(p.copy())[0]
        p[i] = orig - h
        f_minus = fun(p.copy())[0]
        p[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError(f"objective is non-finite near coordinate {i}")
        g_fd = (f_plus - f_minus) / (2.0 * h)
        err = abs(g_fd - grad[i]) / max(1e-8, abs(g_fd) + abs(grad[i]))
        worst = max(worst, err)
    return worst

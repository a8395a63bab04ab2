"""Pure NumPy implementation of the encoder's hot kernels.

Reference backend: the Cython extension (:mod:`attnaug._ckernels`) mirrors
this API exactly.  All arrays are float64; shapes are documented per
function.  Key-mask convention: 1.0 marks a real token, 0.0 a padding slot.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "pure"

_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def masked_softmax(scores: np.ndarray, key_mask: np.ndarray) -> np.ndarray:
    """Row softmax over the last axis with masked keys excluded.

    scores: (B, R, S); key_mask: (B, S).  Masked positions get probability
    exactly 0; each row with at least one valid key sums to 1.
    """
    neg = np.where(key_mask[:, None, :] > 0.0, 0.0, -np.inf).astype(scores.dtype)
    shifted = scores + neg
    row_max = np.max(shifted, axis=-1, keepdims=True)
    # Rows with no valid key would produce -inf maxima; keep them finite.
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.exp(shifted - row_max)
    e = np.where(key_mask[:, None, :] > 0.0, e, 0.0)
    total = np.sum(e, axis=-1, keepdims=True)
    return np.divide(e, total, out=np.zeros_like(e), where=total > 0.0)


def masked_softmax_backward(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    """Backward of masked_softmax: probs * (dprobs - <dprobs, probs>)."""
    inner = np.sum(dprobs * probs, axis=-1, keepdims=True)
    return probs * (dprobs - inner)


def layer_norm(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise layer normalization.

    x: (R, D).  Returns (y, mean, rstd) where mean/rstd are per-row caches
    for the backward pass.
    """
    mean = np.mean(x, axis=-1)
    var = np.mean((x - mean[:, None]) ** 2, axis=-1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None]) * rstd[:, None]
    return xhat * gamma + beta, mean, rstd


def layer_norm_backward(
    dy: np.ndarray,
    x: np.ndarray,
    gamma: np.ndarray,
    mean: np.ndarray,
    rstd: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backward of layer_norm; returns (dx, dgamma, dbeta)."""
    xhat = (x - mean[:, None]) * rstd[:, None]
    dxhat = dy * gamma
    m1 = np.mean(dxhat, axis=-1, keepdims=True)
    m2 = np.mean(dxhat * xhat, axis=-1, keepdims=True)
    dx = rstd[:, None] * (dxhat - m1 - xhat * m2)
    dgamma = np.sum(dy * xhat, axis=0)
    dbeta = np.sum(dy, axis=0)
    return dx, dgamma, dbeta


def gelu(x: np.ndarray) -> np.ndarray:
    """Smooth GELU (tanh form): 0.5*x*(1 + tanh(c*(x + a*x^3)))."""
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x**3)))


def gelu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    t = np.tanh(_GELU_C * (x + _GELU_A * x**3))
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementation of the encoder's hot kernels.

Mirrors :mod:`attnaug._kernels_py` function for function.  Float64 only;
results match the pure backend to rounding (summation order differs, so
agreement is within a few ULPs rather than bit-exact).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt, tanh

cnp.import_array()

BACKEND_NAME = "c"

cdef double _GELU_C = 0.7978845608028654  # sqrt(2/pi)
cdef double _GELU_A = 0.044715


def masked_softmax(scores, key_mask):
    """Row softmax over the last axis with masked keys excluded.

    scores: (B, R, S); key_mask: (B, S).  Masked positions get probability
    exactly 0; each row with at least one valid key sums to 1.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=3] sc = np.ascontiguousarray(scores, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] km = np.ascontiguousarray(key_mask, dtype=np.float64)
    cdef Py_ssize_t B = sc.shape[0], R = sc.shape[1], S = sc.shape[2]
    if km.shape[0] != B or km.shape[1] != S:
        raise ValueError("key_mask shape must be (B, S)")
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.empty((B, R, S), dtype=np.float64)
    cdef Py_ssize_t b, r, s
    cdef double m, total, v
    cdef bint any_valid
    for b in range(B):
        for r in range(R):
            any_valid = False
            m = 0.0
            for s in range(S):
                if km[b, s] > 0.0:
                    if not any_valid or sc[b, r, s] > m:
                        m = sc[b, r, s]
                    any_valid = True
            total = 0.0
            for s in range(S):
                if km[b, s] > 0.0:
                    v = exp(sc[b, r, s] - m)
                    out[b, r, s] = v
                    total += v
                else:
                    out[b, r, s] = 0.0
            if total > 0.0:
                for s in range(S):
                    out[b, r, s] = out[b, r, s] / total
            else:
                for s in range(S):
                    out[b, r, s] = 0.0
    return out


def masked_softmax_backward(probs, dprobs):
    """Backward of masked_softmax: probs * (dprobs - <dprobs, probs>)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=3] p = np.ascontiguousarray(probs, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=3] dp = np.ascontiguousarray(dprobs, dtype=np.float64)
    cdef Py_ssize_t B = p.shape[0], R = p.shape[1], S = p.shape[2]
    if dp.shape[0] != B or dp.shape[1] != R or dp.shape[2] != S:
        raise ValueError("probs and dprobs must share a shape")
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.empty((B, R, S), dtype=np.float64)
    cdef Py_ssize_t b, r, s
    cdef double inner
    for b in range(B):
        for r in range(R):
            inner = 0.0
            for s in range(S):
                inner += dp[b, r, s] * p[b, r, s]
            for s in range(S):
                out[b, r, s] = p[b, r, s] * (dp[b, r, s] - inner)
    return out


def layer_norm(x, gamma, beta, double eps=1e-5):
    """Row-wise layer normalization.

    x: (R, D).  Returns (y, mean, rstd) where mean/rstd are per-row caches
    for the backward pass.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] g = np.ascontiguousarray(gamma, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] be = np.ascontiguousarray(beta, dtype=np.float64)
    cdef Py_ssize_t R = xa.shape[0], D = xa.shape[1]
    if g.shape[0] != D or be.shape[0] != D:
        raise ValueError("gamma and beta must have length D")
    cdef cnp.ndarray[cnp.float64_t, ndim=2] y = np.empty((R, D), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] mean = np.empty(R, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] rstd = np.empty(R, dtype=np.float64)
    cdef Py_ssize_t r, j
    cdef double mu, var, diff, rs
    for r in range(R):
        mu = 0.0
        for j in range(D):
            mu += xa[r, j]
        mu /= D
        var = 0.0
        for j in range(D):
            diff = xa[r, j] - mu
            var += diff * diff
        var /= D
        rs = 1.0 / sqrt(var + eps)
        mean[r] = mu
        rstd[r] = rs
        for j in range(D):
            y[r, j] = (xa[r, j] - mu) * rs * g[j] + be[j]
    return y, mean, rstd


def layer_norm_backward(dy, x, gamma, mean, rstd):
    """Backward of layer_norm; returns (dx, dgamma, dbeta)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dya = np.ascontiguousarray(dy, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] g = np.ascontiguousarray(gamma, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] mu = np.ascontiguousarray(mean, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] rs = np.ascontiguousarray(rstd, dtype=np.float64)
    cdef Py_ssize_t R = xa.shape[0], D = xa.shape[1]
    if dya.shape[0] != R or dya.shape[1] != D:
        raise ValueError("dy and x must share a shape")
    if g.shape[0] != D or mu.shape[0] != R or rs.shape[0] != R:
        raise ValueError("gamma/mean/rstd shapes do not match x")
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dx = np.empty((R, D), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dgamma = np.zeros(D, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dbeta = np.zeros(D, dtype=np.float64)
    cdef Py_ssize_t r, j
    cdef double m1, m2, xhat, dxhat
    for r in range(R):
        m1 = 0.0
        m2 = 0.0
        for j in range(D):
            xhat = (xa[r, j] - mu[r]) * rs[r]
            dxhat = dya[r, j] * g[j]
            m1 += dxhat
            m2 += dxhat * xhat
        m1 /= D
        m2 /= D
        for j in range(D):
            xhat = (xa[r, j] - mu[r]) * rs[r]
            dxhat = dya[r, j] * g[j]
            dx[r, j] = rs[r] * (dxhat - m1 - xhat * m2)
            dgamma[j] += dya[r, j] * xhat
            dbeta[j] += dya[r, j]
    return dx, dgamma, dbeta


cdef void _gelu_flat(const double[::1] x, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double t
    for i in range(n):
        t = tanh(_GELU_C * (x[i] + _GELU_A * x[i] * x[i] * x[i]))
        out[i] = 0.5 * x[i] * (1.0 + t)


cdef void _gelu_backward_flat(
    const double[::1] x, const double[::1] dy, double[::1] out
) noexcept nogil:
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double t, dt
    for i in range(n):
        t = tanh(_GELU_C * (x[i] + _GELU_A * x[i] * x[i] * x[i]))
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x[i] * x[i])
        out[i] = dy[i] * (0.5 * (1.0 + t) + 0.5 * x[i] * dt)


def gelu(x):
    """Smooth GELU (tanh form): 0.5*x*(1 + tanh(c*(x + a*x^3)))."""
    xa = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(xa)
    _gelu_flat(xa.ravel(), out.ravel())
    return out


def gelu_backward(x, dy):
    xa = np.ascontiguousarray(x, dtype=np.float64)
    dya = np.ascontiguousarray(dy, dtype=np.float64)
    if xa.shape != dya.shape:
        raise ValueError("x and dy must share a shape")
    out = np.empty_like(xa)
    _gelu_backward_flat(xa.ravel(), dya.ravel(), out.ravel())
    return out

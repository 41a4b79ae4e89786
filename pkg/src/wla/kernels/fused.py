"""Fused row-wise normalization / softmax / silu with analytic backwards.

All functions take the reduction over the last axis. Wrappers reshape to
[rows, D] and restore the caller's shape, so any leading shape works.
"""

import numpy as np

from . import USE_NUMBA, jit

LN_EPS = 1e-5


def _ln_fwd_loop(x, y, rstd, eps):
    rows, d = x.shape
    for r in range(rows):
        m = 0.0
        for j in range(d):
            m += x[r, j]
        m /= d
        var = 0.0
        for j in range(d):
            t = x[r, j] - m
            var += t * t
        var /= d
        rs = 1.0 / np.sqrt(var + eps)
        rstd[r] = rs
        for j in range(d):
            y[r, j] = (x[r, j] - m) * rs


def _ln_bwd_loop(dy, y, rstd, dx):
    rows, d = y.shape
    for r in range(rows):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            m1 += dy[r, j]
            m2 += dy[r, j] * y[r, j]
        m1 /= d
        m2 /= d
        rs = rstd[r]
        for j in range(d):
            dx[r, j] = rs * (dy[r, j] - m1 - y[r, j] * m2)


def _sm_fwd_loop(x, y):
    rows, d = x.shape
    for r in range(rows):
        mx = x[r, 0]
        for j in range(1, d):
            if x[r, j] > mx:
                mx = x[r, j]
        tot = 0.0
        for j in range(d):
            e = np.exp(x[r, j] - mx)
            y[r, j] = e
            tot += e
        for j in range(d):
            y[r, j] /= tot


def _sm_bwd_loop(dy, y, dx):
    rows, d = y.shape
    for r in range(rows):
        dot = 0.0
        for j in range(d):
            dot += dy[r, j] * y[r, j]
        for j in range(d):
            dx[r, j] = y[r, j] * (dy[r, j] - dot)


def _silu_fwd_loop(x, y):
    for i in range(x.shape[0]):
        s = 1.0 / (1.0 + np.exp(-x[i]))
        y[i] = x[i] * s


def _silu_bwd_loop(dy, x, dx):
    for i in range(x.shape[0]):
        s = 1.0 / (1.0 + np.exp(-x[i]))
        dx[i] = dy[i] * s * (1.0 + x[i] * (1.0 - s))


_ln_fwd_jit = jit(_ln_fwd_loop)
_ln_bwd_jit = jit(_ln_bwd_loop)
_sm_fwd_jit = jit(_sm_fwd_loop)
_sm_bwd_jit = jit(_sm_bwd_loop)
_silu_fwd_jit = jit(_silu_fwd_loop)
_silu_bwd_jit = jit(_silu_bwd_loop)


def _rows(x):
    return np.ascontiguousarray(x).reshape(-1, x.shape[-1])


def layernorm_fwd(x, eps=LN_EPS):
    """Normalize last axis to zero mean, unit variance. Returns (y, rstd)."""
    x2 = _rows(x)
    y = np.empty_like(x2)
    rstd = np.empty(x2.shape[0], x2.dtype)
    if USE_NUMBA:
        _ln_fwd_jit(x2, y, rstd, eps)
    else:
        m = x2.mean(axis=1, keepdims=True)
        var = ((x2 - m) ** 2).mean(axis=1, keepdims=True)
        rstd[:] = 1.0 / np.sqrt(var[:, 0] + eps)
        y[:] = (x2 - m) * rstd[:, None]
    return y.reshape(x.shape), rstd.reshape(x.shape[:-1])


def layernorm_bwd(dy, y, rstd):
    dy2 = _rows(dy)
    y2 = _rows(y)
    dx = np.empty_like(dy2)
    if USE_NUMBA:
        _ln_bwd_jit(dy2, y2, np.ascontiguousarray(rstd).reshape(-1), dx)
    else:
        m1 = dy2.mean(axis=1, keepdims=True)
        m2 = (dy2 * y2).mean(axis=1, keepdims=True)
        dx[:] = rstd.reshape(-1)[:, None] * (dy2 - m1 - y2 * m2)
    return dx.reshape(dy.shape)


def softmax_fwd(x):
    x2 = _rows(x)
    y = np.empty_like(x2)
    if USE_NUMBA:
        _sm_fwd_jit(x2, y)
    else:
        e = np.exp(x2 - x2.max(axis=1, keepdims=True))
        y[:] = e / e.sum(axis=1, keepdims=True)
    return y.reshape(x.shape)


def softmax_bwd(dy, y):
    dy2 = _rows(dy)
    y2 = _rows(y)
    dx = np.empty_like(dy2)
    if USE_NUMBA:
        _sm_bwd_jit(dy2, y2, dx)
    else:
        dot = (dy2 * y2).sum(axis=1, keepdims=True)
        dx[:] = y2 * (dy2 - dot)
    return dx.reshape(dy.shape)


def silu_fwd(x):
    xf = np.ascontiguousarray(x).reshape(-1)
    y = np.empty_like(xf)
    if USE_NUMBA:
        _silu_fwd_jit(xf, y)
    else:
        y[:] = xf / (1.0 + np.exp(-xf))
    return y.reshape(x.shape)


def silu_bwd(dy, x):
    dyf = np.ascontiguousarray(dy).reshape(-1)
    xf = np.ascontiguousarray(x).reshape(-1)
    dx = np.empty_like(xf)
    if USE_NUMBA:
        _silu_bwd_jit(dyf, xf, dx)
    else:
        s = 1.0 / (1.0 + np.exp(-xf))
        dx[:] = dyf * s * (1.0 + xf * (1.0 - s))
    return dx.reshape(x.shape)

"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps an ndarray plus an optional backward closure and parent
references. Ops record onto the graph only when gradients are enabled and at
least one input requires them, so inference-time code pays no tracing cost.
``backward`` runs an iterative topological traversal, accumulates ``.grad`` on
leaves, and frees intermediate grads and closures as it goes to bound memory.

Training runs in float32; gradient checking uses float64 tensors (op dtype
follows the input arrays).
"""

import numpy as np

from . import kernels

_grad_enabled = True


class no_grad:
    """Context manager disabling graph recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- graph traversal -------------------------------------------------

    def backward(self):
        """Backpropagate from a scalar. Accumulates into leaf ``.grad``."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar, got shape {self.data.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is None:
                continue
            grads = node._backward(node.grad)
            for p, g in zip(node._parents, grads):
                if g is None or not p.requires_grad:
                    continue
                p.grad = g if p.grad is None else p.grad + g
            # release graph + intermediate grad memory as we go
            node._backward = None
            node._parents = ()
            if node is not self:
                node.grad = None

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return powc(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def _ensure(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, bwd):
    rg = _grad_enabled and any(p.requires_grad for p in parents)
    t = Tensor(data, requires_grad=rg)
    if rg:
        t._parents = tuple(parents)
        t._backward = bwd
    return t


def _unbroadcast(g, shape):
    """Sum grad over axes that numpy broadcasting expanded."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- arithmetic ----------------------------------------------------------


def add(a, b):
    a = _ensure(a, b if isinstance(b, Tensor) else None)
    b = _ensure(b, a)
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, (a, b), bwd)


def sub(a, b):
    a = _ensure(a, b if isinstance(b, Tensor) else None)
    b = _ensure(b, a)
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(out, (a, b), bwd)


def mul(a, b):
    a = _ensure(a, b if isinstance(b, Tensor) else None)
    b = _ensure(b, a)
    out = a.data * b.data

    def bwd(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), bwd)


def div(a, b):
    a = _ensure(a, b if isinstance(b, Tensor) else None)
    b = _ensure(b, a)
    out = a.data / b.data

    def bwd(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(out, (a, b), bwd)


def neg(a):
    def bwd(g):
        return (-g,)

    return _make(-a.data, (a,), bwd)


def powc(a, p):
    p = float(p)
    out = a.data ** p

    def bwd(g):
        return (g * p * a.data ** (p - 1.0),)

    return _make(out, (a,), bwd)


def matmul(a, b):
    out = a.data @ b.data

    def bwd(g):
        da = g @ b.data.swapaxes(-1, -2)
        db = a.data.swapaxes(-1, -2) @ g
        return _unbroadcast(da, a.data.shape), _unbroadcast(db, b.data.shape)

    return _make(out, (a, b), bwd)


# -- pointwise nonlinearities -------------------------------------------


def texp(a):
    out = np.exp(a.data)

    def bwd(g):
        return (g * out,)

    return _make(out, (a,), bwd)


def tlog(a):
    def bwd(g):
        return (g / a.data,)

    return _make(np.log(a.data), (a,), bwd)


def tanh(a):
    out = np.tanh(a.data)

    def bwd(g):
        return (g * (1.0 - out * out),)

    return _make(out, (a,), bwd)


def sigmoid(a):
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), bwd)


def silu(a):
    out = kernels.silu_fwd(a.data)

    def bwd(g):
        return (kernels.silu_bwd(g, a.data),)

    return _make(out, (a,), bwd)


def tsin(a):
    def bwd(g):
        return (g * np.cos(a.data),)

    return _make(np.sin(a.data), (a,), bwd)


def tcos(a):
    def bwd(g):
        return (-g * np.sin(a.data),)

    return _make(np.cos(a.data), (a,), bwd)


def tabs(a):
    def bwd(g):
        return (g * np.sign(a.data),)

    return _make(np.abs(a.data), (a,), bwd)


# -- shape ops -----------------------------------------------------------


def reshape(a, shape):
    out = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(a.data.shape),)

    return _make(out, (a,), bwd)


def transpose(a, axes):
    inv = np.argsort(axes)

    def bwd(g):
        return (g.transpose(inv),)

    return _make(a.data.transpose(axes), (a,), bwd)


def concat(tensors, axis=0):
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), bwd)


def getitem(a, idx):
    out = a.data[idx]
    fancy = any(isinstance(i, (np.ndarray, list)) for i in
                (idx if isinstance(idx, tuple) else (idx,)))

    def bwd(g):
        dz = np.zeros_like(a.data)
        if fancy:
            np.add.at(dz, idx, g)
        else:
            dz[idx] += g
        return (dz,)

    return _make(out, (a,), bwd)


def gather_rows(a, idx):
    """out[b, i] = a[b, idx[b, i]] for a [B, N, ...], idx [B, N] int."""
    idx = np.asarray(idx)
    bix = np.arange(a.data.shape[0])[:, None]
    out = a.data[bix, idx]

    def bwd(g):
        dz = np.zeros_like(a.data)
        np.add.at(dz, (bix, idx), g)
        return (dz,)

    return _make(out, (a,), bwd)


# -- reductions ----------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.data.shape),)

    return _make(out, (a,), bwd)


def tmean(a, axis=None, keepdims=False):
    denom = a.data.size if axis is None else np.prod(
        [a.data.shape[i] for i in (axis if isinstance(axis, tuple) else (axis,))])
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / denom, a.data.shape),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g / denom, a.data.shape),)

    return _make(out, (a,), bwd)


def cumsum(a, axis):
    out = np.cumsum(a.data, axis=axis)

    def bwd(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _make(out, (a,), bwd)


# -- fused kernel ops ----------------------------------------------------


def softmax(a, axis=-1):
    ax = axis % a.ndim
    last = a.ndim - 1
    if ax == last:
        out = kernels.softmax_fwd(a.data)

        def bwd(g):
            return (kernels.softmax_bwd(g, out),)

        return _make(out, (a,), bwd)
    moved = np.ascontiguousarray(np.moveaxis(a.data, ax, last))
    out_m = kernels.softmax_fwd(moved)
    out = np.moveaxis(out_m, last, ax)

    def bwd(g):
        gm = np.ascontiguousarray(np.moveaxis(g, ax, last))
        return (np.moveaxis(kernels.softmax_bwd(gm, out_m), last, ax),)

    return _make(out, (a,), bwd)


def layernorm(a):
    """Zero-mean unit-variance over the last axis (no affine params)."""
    out, rstd = kernels.layernorm_fwd(a.data)

    def bwd(g):
        return (kernels.layernorm_bwd(g, out, rstd),)

    return _make(out, (a,), bwd)


def rotscale(lam, the, z):
    """Advance latent planes: lam/the [...], z broadcastable to [..., 2]."""
    if lam.data.shape != the.data.shape:
        raise ValueError("lam and the must share a shape")
    zfull = np.ascontiguousarray(
        np.broadcast_to(z.data, lam.data.shape + (2,)))
    out, ec, es = kernels.rotscale_fwd(lam.data, the.data, zfull)

    def bwd(g):
        dlam, dthe, dz = kernels.rotscale_bwd(g, out, ec, es)
        return dlam, dthe, _unbroadcast(dz, z.data.shape)

    return _make(out, (lam, the, z), bwd)


# -- optimizer -----------------------------------------------------------


class AdamW:
    """Adam with decoupled weight decay and a non-finite-gradient guard.

    ``step`` returns False (and counts the skip) when any parameter gradient
    contains NaN/Inf, leaving parameters and moments untouched.
    """

    def __init__(self, params, lr=5e-4, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.1):
        self.params = dict(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.skipped = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        for p in self.params.values():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                self.skipped += 1
                return False
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[k]
            v = self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            upd = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                upd = upd + self.weight_decay * p.data
            p.data -= lr * upd
        return True


# -- gradient checking ---------------------------------------------------


def numeric_grad(f, t, h=1e-5):
    """Central-difference gradient of scalar-valued f wrt tensor t."""
    g = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        fp = f().item()
        flat[i] = keep - h
        fm = f().item()
        flat[i] = keep
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def gradcheck(f, tensors, h=1e-5):
    """Max relative error between analytic and numeric grads of scalar f."""
    for t in tensors:
        t.grad = None
    f().backward()
    worst = 0.0
    for t in tensors:
        ga = t.grad if t.grad is not None else np.zeros_like(t.data)
        with no_grad():
            gn = numeric_grad(f, t, h)
        denom = max(np.linalg.norm(ga), np.linalg.norm(gn), 1e-12)
        worst = max(worst, np.linalg.norm(ga - gn) / denom)
    return worst

"""Network building blocks over the autodiff engine.

Every layer registers its parameters into a shared dict under a dotted prefix
so checkpointing can address tensors by name. Initialization draws from one
seeded generator for end-to-end determinism.
"""

import numpy as np

from . import tensor as tz


def register(params, name, array):
    if name in params:
        raise ValueError(f"duplicate parameter name {name}")
    t = tz.Tensor(np.asarray(array, np.float32), requires_grad=True)
    params[name] = t
    return t


class Linear:
    def __init__(self, rng, params, prefix, nin, nout, scale=None, bias=True):
        std = (2.0 / (nin + nout)) ** 0.5 if scale is None else scale
        self.w = register(params, prefix + ".w", rng.normal(0.0, std, (nin, nout)))
        self.b = register(params, prefix + ".b", np.zeros(nout)) if bias else None

    def __call__(self, x):
        y = x @ self.w
        return y if self.b is None else y + self.b


class LayerNorm:
    """Normalization over the last axis with learned gain and bias."""

    def __init__(self, params, prefix, dim):
        self.g = register(params, prefix + ".g", np.ones(dim))
        self.b = register(params, prefix + ".b", np.zeros(dim))

    def __call__(self, x):
        return tz.layernorm(x) * self.g + self.b


class Attention:
    def __init__(self, rng, params, prefix, width, heads):
        if width % heads:
            raise ValueError(f"width {width} not divisible by heads {heads}")
        self.heads = heads
        self.hd = width // heads
        self.scale = 1.0 / np.sqrt(self.hd)
        self.q = Linear(rng, params, prefix + ".q", width, width)
        self.k = Linear(rng, params, prefix + ".k", width, width)
        self.v = Linear(rng, params, prefix + ".v", width, width)
        self.o = Linear(rng, params, prefix + ".o", width, width)

    def __call__(self, x, mask=None):
        b, l, w = x.shape
        h, hd = self.heads, self.hd

        def split(t):
            return t.reshape((b, l, h, hd)).transpose((0, 2, 1, 3))

        q = split(self.q(x))
        k = split(self.k(x))
        v = split(self.v(x))
        scores = (q @ k.transpose((0, 1, 3, 2))) * self.scale
        if mask is not None:
            scores = scores + mask
        attn = tz.softmax(scores, axis=-1)
        out = (attn @ v).transpose((0, 2, 1, 3)).reshape((b, l, w))
        return self.o(out)


class Block:
    """Pre-norm transformer block: attention + MLP, both residual."""

    def __init__(self, rng, params, prefix, width, heads, mlp_ratio):
        self.ln1 = LayerNorm(params, prefix + ".ln1", width)
        self.attn = Attention(rng, params, prefix + ".attn", width, heads)
        self.ln2 = LayerNorm(params, prefix + ".ln2", width)
        hidden = width * mlp_ratio
        self.fc1 = Linear(rng, params, prefix + ".fc1", width, hidden)
        self.fc2 = Linear(rng, params, prefix + ".fc2", hidden, width)

    def __call__(self, x, mask=None):
        x = x + self.attn(self.ln1(x), mask)
        return x + self.fc2(tz.silu(self.fc1(self.ln2(x))))


def sincos_1d(length, width, dtype=np.float32):
    """Fixed sinusoidal embeddings [length, width]; width even."""
    if width % 2:
        raise ValueError("width must be even")
    half = width // 2
    omega = 1.0 / (10000.0 ** (np.arange(half) / max(half, 1)))
    ang = np.arange(length)[:, None] * omega[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(dtype)


def sincos_2d(grid, width, dtype=np.float32):
    """Fixed 2-D sinusoidal embeddings for a grid x grid layout."""
    if width % 4:
        raise ValueError("width must be divisible by 4")
    ys, xs = np.meshgrid(np.arange(grid), np.arange(grid), indexing="ij")
    ex = sincos_1d(grid, width // 2, dtype)
    return np.concatenate([ex[xs.ravel()], ex[ys.ravel()]], axis=1).astype(dtype)


def causal_mask(length, dtype=np.float32):
    """[length, length] additive mask: 0 on/below diagonal, -1e9 above."""
    m = np.triu(np.full((length, length), -1e9, dtype), k=1)
    return m

"""Log-domain algebra of latent rotation-scaling operators.

A latent slot vector of dimension D = 2*J*F is a stack of J*F planes. The
transition operator on each plane is e^L R(T): scaling by e^L and rotation by
angle T. Operators are stored as (L, T) per plane, so composition is addition,
inversion is negation, and fractional powers are scalar multiplication — all
exact. Matrices are materialized only when applying to a latent.

Per-slot generator rates come as J base pairs (lam~, the~) and expand to J*F
planes through a fixed frequency schedule: the rotation rate of plane (j, f)
is r_f * the~[j] while the scaling rate is shared across f.
"""

from dataclasses import dataclass

import numpy as np

from .kernels import rotscale_fwd


@dataclass(frozen=True)
class FrequencySchedule:
    """Per-frequency rotation multipliers r_f; r_1 = 1, geometric decay."""

    ratios: np.ndarray
    base: float

    @property
    def freqs(self):
        return int(self.ratios.shape[0])


def make_schedule(freqs, base=100.0):
    if freqs < 1:
        raise ValueError(f"freqs must be >= 1, got {freqs}")
    if base <= 1.0:
        raise ValueError(f"base must be > 1, got {base}")
    expo = np.arange(freqs, dtype=np.float64) / max(freqs - 1, 1)
    return FrequencySchedule(ratios=base ** (-expo), base=float(base))


@dataclass
class LieParams:
    """Generator rates per slot and toric component: arrays [..., N, J]."""

    lam: np.ndarray
    the: np.ndarray

    def __post_init__(self):
        self.lam = np.asarray(self.lam)
        self.the = np.asarray(self.the)
        if self.lam.shape != self.the.shape:
            raise ValueError(f"lam/the shape mismatch: {self.lam.shape} vs {self.the.shape}")


@dataclass
class LogOperator:
    """Accumulated log-scales and angles per plane: arrays [..., N, J, F]."""

    Lam: np.ndarray
    The: np.ndarray

    def __post_init__(self):
        self.Lam = np.asarray(self.Lam)
        self.The = np.asarray(self.The)
        if self.Lam.shape != self.The.shape:
            raise ValueError(f"Lam/The shape mismatch: {self.Lam.shape} vs {self.The.shape}")

    @property
    def shape(self):
        return self.Lam.shape


def identity_op(slots, planes, freqs, dtype=np.float64):
    shape = (slots, planes, freqs)
    return LogOperator(np.zeros(shape, dtype), np.zeros(shape, dtype))


def expand(params, sched):
    """Rates [..., N, J] -> per-plane generator field [..., N, J, F]."""
    r = sched.ratios.astype(params.the.dtype, copy=False)
    lam_f = np.broadcast_to(params.lam[..., None], params.lam.shape + (sched.freqs,)).copy()
    the_f = params.the[..., None] * r
    return lam_f, the_f


def integrate(seq, sched):
    """Piecewise-constant integration of (LieParams, duration) steps."""
    if not seq:
        raise ValueError("integrate needs at least one step")
    Lam = None
    The = None
    for params, delta in seq:
        if not delta > 0:
            raise ValueError(f"step duration must be positive, got {delta}")
        lam_f, the_f = expand(params, sched)
        if Lam is None:
            Lam = lam_f * delta
            The = the_f * delta
        else:
            Lam = Lam + lam_f * delta
            The = The + the_f * delta
    return LogOperator(Lam, The)


def compose(a, b):
    if a.shape != b.shape:
        raise ValueError(f"operator shape mismatch: {a.shape} vs {b.shape}")
    return LogOperator(a.Lam + b.Lam, a.The + b.The)


def invert(op):
    return LogOperator(-op.Lam, -op.The)


def power(op, s):
    s = float(s)
    return LogOperator(op.Lam * s, op.The * s)


def matrix(op):
    """Materialize the per-plane 2x2 matrices, shape [..., N, J, F, 2, 2]."""
    g = np.exp(op.Lam)
    c = np.cos(op.The)
    s = np.sin(op.The)
    m = np.empty(op.shape + (2, 2), dtype=g.dtype)
    m[..., 0, 0] = g * c
    m[..., 0, 1] = -g * s
    m[..., 1, 0] = g * s
    m[..., 1, 1] = g * c
    return m


def to_planes(z, planes, freqs):
    """[..., D] latent -> [..., J, F, 2] plane view (D = 2*J*F)."""
    z = np.asarray(z)
    d = 2 * planes * freqs
    if z.shape[-1] != d:
        raise ValueError(f"latent dim {z.shape[-1]} does not match 2*{planes}*{freqs}")
    return z.reshape(z.shape[:-1] + (planes, freqs, 2))


def from_planes(zp):
    return zp.reshape(zp.shape[:-3] + (zp.shape[-3] * zp.shape[-2] * 2,))


def apply_op(op, z):
    """Advance latent z [..., N, D] by the operator. Exact block form."""
    planes, freqs = op.shape[-2], op.shape[-1]
    zp = to_planes(z, planes, freqs)
    if zp.shape[:-1] != op.shape:
        try:
            np.broadcast_shapes(zp.shape[:-1], op.shape)
        except ValueError:
            raise ValueError(
                f"operator shape {op.shape} incompatible with latent planes {zp.shape[:-1]}")
    shape = np.broadcast_shapes(zp.shape[:-1], op.shape)
    Lam = np.broadcast_to(op.Lam, shape)
    The = np.broadcast_to(op.The, shape)
    zp = np.broadcast_to(zp, shape + (2,))
    out, _, _ = rotscale_fwd(Lam, The, zp)
    return from_planes(out)

"""Plane-wise rotation-scaling: the latent transition primitive.

Each latent plane (a, b) is advanced by the 2x2 matrix
``e^L [[cos T, -sin T], [sin T, cos T]]`` for log-scale L and angle T. The
forward returns the advanced planes plus the cached matrix entries; the
backward maps output grads to (dL, dT, dz) in closed form:

    da = dA*e_c + dB*e_s          dL = dA*A + dB*B
    db = -dA*e_s + dB*e_c         dT = -dA*B + dB*A

with (A, B) the outputs and (e_c, e_s) = e^L (cos T, sin T).
"""

import numpy as np

from . import USE_NUMBA, jit


def _fwd_loop(lam, the, z, out, ec, es):
    for p in range(lam.shape[0]):
        g = np.exp(lam[p])
        c = np.cos(the[p])
        s = np.sin(the[p])
        e1 = g * c
        e2 = g * s
        ec[p] = e1
        es[p] = e2
        a = z[p, 0]
        b = z[p, 1]
        out[p, 0] = e1 * a - e2 * b
        out[p, 1] = e2 * a + e1 * b


def _bwd_loop(dout, out, ec, es, dlam, dthe, dz):
    for p in range(ec.shape[0]):
        da_, db_ = dout[p, 0], dout[p, 1]
        a_, b_ = out[p, 0], out[p, 1]
        dlam[p] = da_ * a_ + db_ * b_
        dthe[p] = -da_ * b_ + db_ * a_
        dz[p, 0] = da_ * ec[p] + db_ * es[p]
        dz[p, 1] = -da_ * es[p] + db_ * ec[p]


_fwd_jit = jit(_fwd_loop)
_bwd_jit = jit(_bwd_loop)


def rotscale_fwd(lam, the, z):
    """lam, the: [...]; z: [..., 2]. Returns (out, ec, es)."""
    lam = np.ascontiguousarray(lam)
    the = np.ascontiguousarray(the)
    z = np.ascontiguousarray(z)
    out = np.empty_like(z)
    ec = np.empty_like(lam)
    es = np.empty_like(lam)
    if USE_NUMBA:
        _fwd_jit(lam.reshape(-1), the.reshape(-1), z.reshape(-1, 2),
                 out.reshape(-1, 2), ec.reshape(-1), es.reshape(-1))
    else:
        g = np.exp(lam)
        np.multiply(g, np.cos(the), out=ec)
        np.multiply(g, np.sin(the), out=es)
        a = z[..., 0]
        b = z[..., 1]
        out[..., 0] = ec * a - es * b
        out[..., 1] = es * a + ec * b
    return out, ec, es


def rotscale_bwd(dout, out, ec, es):
    """Returns (dlam, dthe, dz) matching the forward's input shapes."""
    dout = np.ascontiguousarray(dout)
    dlam = np.empty_like(ec)
    dthe = np.empty_like(ec)
    dz = np.empty_like(dout)
    if USE_NUMBA:
        _bwd_jit(dout.reshape(-1, 2), out.reshape(-1, 2),
                 ec.reshape(-1), es.reshape(-1),
                 dlam.reshape(-1), dthe.reshape(-1), dz.reshape(-1, 2))
    else:
        da_ = dout[..., 0]
        db_ = dout[..., 1]
        a_ = out[..., 0]
        b_ = out[..., 1]
        np.add(da_ * a_, db_ * b_, out=dlam)
        np.subtract(db_ * a_, da_ * b_, out=dthe)
        dz[..., 0] = da_ * ec + db_ * es
        dz[..., 1] = -da_ * es + db_ * ec
    return dlam, dthe, dz

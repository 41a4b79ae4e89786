"""Inverse dynamics inference, least-action slot alignment, and rollouts.

These are the plain-array inference paths used by evaluation and the session
service; training builds the equivalent computations as autodiff graphs. Both
share the same operator algebra, so one-shot composed prediction and stepwise
prediction agree exactly in latent space.
"""

from dataclasses import dataclass

import numpy as np

from . import lie
from .kernels.assignment import solve_assignment_batch


def infer_action(bundle, z_t, z_next):
    """Aligned latent pair [..., N, D] -> LieParams [..., N, J].

    Honors the model's training-time ablation: a bundle trained with rotation
    disabled reports zero angles here too.
    """
    lam, the = bundle.idm.infer_np(z_t, z_next)
    if bundle.cfg.ablate_no_rotation:
        the = np.zeros_like(the)
    return lie.LieParams(lam=lam, the=the)


def rate_cost(lam, the, sched):
    """Squared generator norm of rate pairs [..., J] -> [...].

    Expands over frequencies: sum_f (lam^2 + (r_f the)^2), i.e. the Frobenius
    norm (up to the constant 2) of the block generator the rates induce.
    """
    r2 = float(np.sum(sched.ratios ** 2))
    f = float(sched.freqs)
    return f * np.sum(lam ** 2, axis=-1) + r2 * np.sum(the ** 2, axis=-1)


def assignment_costs(bundle, z_ref, z_next):
    """Pairwise least-action costs [B, N, N]: ref slot -> candidate slot."""
    b, n, d = z_ref.shape
    za = np.broadcast_to(z_ref[:, :, None, :], (b, n, n, d)).reshape(-1, d)
    zb = np.broadcast_to(z_next[:, None, :, :], (b, n, n, d)).reshape(-1, d)
    params = infer_action(bundle, za, zb)
    cost = rate_cost(params.lam, params.the, bundle.sched)
    return cost.reshape(b, n, n)


def align_sequence(bundle, z_seq):
    """Chain least-action alignment through time.

    z_seq: [B, T, N, D]. Returns perms [B, T, N] (int64) such that
    z_seq[b, t, perms[b, t]] is in the canonical slot order of frame 0.
    Disabled (identity) for bundles trained without least-action alignment.
    """
    b, t, n, d = z_seq.shape
    perms = np.broadcast_to(np.arange(n, dtype=np.int64), (b, t, n)).copy()
    if bundle.cfg.ablate_no_least_action or n == 1:
        return perms
    cur = z_seq[:, 0]
    for step in range(1, t):
        cost = assignment_costs(bundle, cur, z_seq[:, step])
        p = solve_assignment_batch(cost)
        perms[:, step] = p
        cur = np.take_along_axis(z_seq[:, step], p[:, :, None], axis=1)
    return perms


def apply_perms(z_seq, perms):
    return np.take_along_axis(z_seq, perms[..., None], axis=2)


def align_pair(bundle, z_ref, z_next):
    """[B, N, D] pair -> (aligned z_next, perms [B, N])."""
    n = z_ref.shape[1]
    if bundle.cfg.ablate_no_least_action or n == 1:
        perms = np.broadcast_to(np.arange(n, dtype=np.int64),
                                z_ref.shape[:2]).copy()
        return z_next, perms
    cost = assignment_costs(bundle, z_ref, z_next)
    perms = solve_assignment_batch(cost)
    return np.take_along_axis(z_next, perms[:, :, None], axis=1), perms


@dataclass
class RolloutResult:
    frames: np.ndarray        # [S+1, H, W, 3]; frames[0] decodes the anchor
    latents: np.ndarray       # [S+1, N, D]
    step_ops: list            # S LogOperators, one per transition
    step_params: list         # S LieParams


def _decode_stack(bundle, latents):
    comp, _, _ = bundle.dec.decode_np(latents)
    return comp


def rollout_forward(bundle, z0, params_seq, delta):
    """Iterate operators forward from z0; predictions are one-shot from the
    composed log operator at each horizon (exact log-domain additivity)."""
    if not params_seq:
        raise ValueError("params_seq must be nonempty")
    sched = bundle.sched
    z0 = np.asarray(z0, np.float32)
    steps = len(params_seq)
    latents = np.empty((steps + 1,) + z0.shape, np.float32)
    latents[0] = z0
    step_ops = []
    cum = None
    for i, p in enumerate(params_seq):
        op = lie.integrate([(p, delta)], sched)
        step_ops.append(op)
        cum = op if cum is None else lie.compose(cum, op)
        latents[i + 1] = lie.apply_op(cum, z0)
    frames = _decode_stack(bundle, latents)
    return RolloutResult(frames=frames, latents=latents, step_ops=step_ops,
                         step_params=list(params_seq))


def rollout_backward(bundle, z_last, params_seq, delta):
    """Anchor at the final latent; position t decodes the inverse of the
    operator suffix params_seq[t:], so index t matches rollout_forward's."""
    if not params_seq:
        raise ValueError("params_seq must be nonempty")
    sched = bundle.sched
    z_last = np.asarray(z_last, np.float32)
    steps = len(params_seq)
    latents = np.empty((steps + 1,) + z_last.shape, np.float32)
    latents[steps] = z_last
    step_ops = [lie.integrate([(p, delta)], sched) for p in params_seq]
    cum = None
    for t in range(steps - 1, -1, -1):
        cum = step_ops[t] if cum is None else lie.compose(step_ops[t], cum)
        latents[t] = lie.apply_op(lie.invert(cum), z_last)
    frames = _decode_stack(bundle, latents)
    return RolloutResult(frames=frames, latents=latents, step_ops=step_ops,
                         step_params=list(params_seq))


def interpolate(bundle, z0, op, s):
    """Decode the fractional advance pow(op, s) of z0; s in [0, 1]."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"interpolation fraction must be in [0, 1], got {s}")
    z = lie.apply_op(lie.power(op, s), np.asarray(z0, np.float32))
    comp, _, _ = bundle.dec.decode_np(z[None])
    return comp[0]

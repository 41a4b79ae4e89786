"""The four learned components: slot encoder, slot decoder, inverse-dynamics
MLP, and the causal action-conditioned controller.

All models store parameters in a flat name->Tensor dict (prefixes "enc.",
"dec.", "idm.", "ctrl.") so checkpoints address every tensor by name. Forward
passes take and return autodiff tensors; *_np helpers run the same code under
no_grad for plain-array callers.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import nn
from . import tensor as tz
from .config import TrainConfig
from .lie import make_schedule


class Encoder:
    """Patch transformer + competitive slot attention -> [B, N, D] latents.

    Slot attention softmaxes the query-key logits over the slot axis so slots
    compete for patches, then renormalizes per slot over patches before the
    weighted readout; each of the K refinement iterations ends with a residual
    MLP update.
    """

    def __init__(self, cfg, rng, params):
        self.cfg = cfg
        m = cfg.model
        w = m.width
        g = m.grid
        self.tokens = g * g
        self.embed = nn.Linear(rng, params, "enc.embed", m.patch * m.patch * 3, w)
        self.pos = tz.Tensor(nn.sincos_2d(g, w))
        self.blocks = [nn.Block(rng, params, f"enc.block{i}", w, m.heads, m.mlp_ratio)
                       for i in range(m.enc_depth)]
        self.ln_in = nn.LayerNorm(params, "enc.ln_in", w)
        self.q = nn.Linear(rng, params, "enc.slot_q", w, w)
        self.k = nn.Linear(rng, params, "enc.slot_k", w, w)
        self.v = nn.Linear(rng, params, "enc.slot_v", w, w)
        self.ln_slots = nn.LayerNorm(params, "enc.ln_slots", w)
        self.ln_upd = nn.LayerNorm(params, "enc.ln_upd", w)
        self.fc1 = nn.Linear(rng, params, "enc.slot_fc1", w, w)
        self.fc2 = nn.Linear(rng, params, "enc.slot_fc2", w, w)
        self.slot_init = nn.register(params, "enc.slot_init",
                                     rng.normal(0.0, 1.0, (m.slots, w)))
        self.ln_out = nn.LayerNorm(params, "enc.ln_out", w)
        self.out = nn.Linear(rng, params, "enc.out", w, m.latent_dim)
        self.scale = 1.0 / np.sqrt(w)

    def _patchify(self, x):
        b = x.shape[0]
        m = self.cfg.model
        g, p = m.grid, m.patch
        x = x.reshape((b, g, p, g, p, 3))
        x = x.transpose((0, 1, 3, 2, 4, 5))
        return x.reshape((b, g * g, p * p * 3))

    def __call__(self, frames):
        """frames: [B, H, W, 3] -> latents [B, N, D]."""
        m = self.cfg.model
        if frames.shape[1:] != (m.image_hw, m.image_hw, 3):
            raise ValueError(f"frame shape {frames.shape[1:]} does not match "
                             f"({m.image_hw}, {m.image_hw}, 3)")
        b = frames.shape[0]
        x = self.embed(self._patchify(frames)) + self.pos
        for blk in self.blocks:
            x = blk(x)
        inp = self.ln_in(x)
        k = self.k(inp)
        v = self.v(inp)
        zero_b = tz.Tensor(np.zeros((b, 1, 1), np.float32))
        slots = self.slot_init.reshape((1, m.slots, m.width)) + zero_b
        for _ in range(m.slot_iters):
            q = self.q(self.ln_slots(slots))
            scores = (q @ k.transpose((0, 2, 1))) * self.scale
            attn = tz.softmax(scores, axis=1)  # compete over slots
            norm = attn.sum(axis=2, keepdims=True) + 1e-8
            upd = (attn / norm) @ v
            slots = upd + self.fc2(tz.silu(self.fc1(self.ln_upd(upd))))
        return self.out(self.ln_out(slots))

    def encode_np(self, frames):
        with tz.no_grad():
            return self(tz.Tensor(np.asarray(frames, np.float32))).data


class Decoder:
    """Slot latents -> per-slot RGB + alpha, composited by softmax weights.

    Each slot token is broadcast to every patch position, refined by shared
    self-attention blocks (slots decode independently), then per-patch heads
    emit P*P*3 RGB values and P*P alpha logits. Alphas softmax across slots
    per pixel; the composite is the alpha-weighted mean of slot RGBs.
    """

    def __init__(self, cfg, rng, params):
        self.cfg = cfg
        m = cfg.model
        w = m.width
        g = m.grid
        self.tokens = g * g
        self.inp = nn.Linear(rng, params, "dec.in", m.latent_dim, w)
        self.pos = tz.Tensor(nn.sincos_2d(g, w))
        self.blocks = [nn.Block(rng, params, f"dec.block{i}", w, m.heads, m.mlp_ratio)
                       for i in range(m.dec_depth)]
        self.ln_out = nn.LayerNorm(params, "dec.ln_out", w)
        p2 = m.patch * m.patch
        self.rgb = nn.Linear(rng, params, "dec.rgb", w, p2 * 3)
        self.alpha = nn.Linear(rng, params, "dec.alpha", w, p2)

    def slot_images(self, z):
        """z: [B, N, D] -> (rgb [B, N, H, W, 3], alpha logits [B, N, H, W])."""
        m = self.cfg.model
        b, n, _ = z.shape
        g, p = m.grid, m.patch
        t = self.inp(z).reshape((b * n, 1, m.width)) + self.pos
        for blk in self.blocks:
            t = blk(t)
        t = self.ln_out(t)
        rgb = tz.sigmoid(self.rgb(t))
        alp = self.alpha(t)
        rgb = rgb.reshape((b, n, g, g, p, p, 3)).transpose((0, 1, 2, 4, 3, 5, 6))
        rgb = rgb.reshape((b, n, g * p, g * p, 3))
        alp = alp.reshape((b, n, g, g, p, p)).transpose((0, 1, 2, 4, 3, 5))
        alp = alp.reshape((b, n, g * p, g * p))
        return rgb, alp

    def __call__(self, z):
        """z: [B, N, D] -> (composite [B, H, W, 3], rgb, alpha weights)."""
        rgb, logits = self.slot_images(z)
        w = tz.softmax(logits, axis=1)
        shp = w.shape
        comp = (rgb * w.reshape(shp + (1,))).sum(axis=1)
        return comp, rgb, w

    def decode_np(self, z):
        with tz.no_grad():
            comp, rgb, w = self(tz.Tensor(np.asarray(z, np.float32)))
            return comp.data, rgb.data, w.data


class IDM:
    """Inverse dynamics: an aligned latent pair -> generator rates.

    One MLP shared across slots maps concat(z_t[n], z_next[n]) to J pairs
    (lam~, the~). Angles are bounded to (-pi, pi) by tanh; scales are left
    free. The output layer starts near zero so initial transitions are close
    to identity.
    """

    def __init__(self, cfg, rng, params):
        self.cfg = cfg
        m = cfg.model
        h = m.idm_hidden
        d = m.latent_dim
        self.fc1 = nn.Linear(rng, params, "idm.fc1", 2 * d, h)
        self.fc2 = nn.Linear(rng, params, "idm.fc2", h, h)
        self.out = nn.Linear(rng, params, "idm.out", h, 2 * m.planes, scale=0.01)

    def __call__(self, za, zb):
        """za, zb: [..., D] aligned pairs -> (lam [..., J], the [..., J])."""
        j = self.cfg.model.planes
        x = tz.concat([za, zb], axis=-1)
        h = tz.silu(self.fc1(x))
        h = tz.silu(self.fc2(h))
        o = self.out(h)
        lam = o[..., :j]
        the = tz.tanh(o[..., j:]) * np.pi
        return lam, the

    def infer_np(self, za, zb):
        with tz.no_grad():
            lam, the = self(tz.Tensor(np.asarray(za, np.float32)),
                            tz.Tensor(np.asarray(zb, np.float32)))
            return lam.data, the.data


class Ctrl:
    """Causal controller: slot history + action labels -> per-slot rates.

    A small causal transformer over time steps. Step t sees latents and
    actions at steps <= t only (additive causal mask), so the controller can
    drive an interactive session where the future does not exist yet.
    """

    def __init__(self, cfg, rng, params, n_actions):
        self.cfg = cfg
        self.n_actions = int(n_actions)
        m = cfg.model
        w = cfg.ctrl_width
        self.emb = nn.register(params, "ctrl.action_emb",
                               rng.normal(0.0, 0.5, (self.n_actions, cfg.ctrl_action_embed)))
        self.inp = nn.Linear(rng, params, "ctrl.in",
                             m.slots * m.latent_dim + cfg.ctrl_action_embed, w)
        self.blocks = [nn.Block(rng, params, f"ctrl.block{i}", w, cfg.ctrl_heads, 2)
                       for i in range(cfg.ctrl_depth)]
        self.ln_out = nn.LayerNorm(params, "ctrl.ln_out", w)
        self.head = nn.Linear(rng, params, "ctrl.head", w,
                              m.slots * 2 * m.planes, scale=0.01)
        self.max_len = 512

    def __call__(self, z_seq, actions):
        """z_seq [B, S, N, D], actions int [B, S] -> (lam, the) [B, S, N, J]."""
        m = self.cfg.model
        b, s, n, d = z_seq.shape
        if s > self.max_len:
            raise ValueError(f"sequence length {s} exceeds {self.max_len}")
        feats = z_seq.reshape((b, s, n * d))
        a_emb = self.emb[np.asarray(actions, np.int64)]
        x = self.inp(tz.concat([feats, a_emb], axis=-1))
        x = x + tz.Tensor(nn.sincos_1d(s, self.cfg.ctrl_width))
        mask = tz.Tensor(nn.causal_mask(s))
        for blk in self.blocks:
            x = blk(x, mask)
        o = self.head(self.ln_out(x)).reshape((b, s, n, 2 * m.planes))
        lam = o[..., :m.planes]
        the = tz.tanh(o[..., m.planes:]) * np.pi
        return lam, the

    def infer_np(self, z_seq, actions):
        with tz.no_grad():
            lam, the = self(tz.Tensor(np.asarray(z_seq, np.float32)),
                            np.asarray(actions, np.int64))
            return lam.data, the.data


@dataclass
class Bundle:
    """Everything a checkpoint holds: config, models, frequency schedule."""

    cfg: TrainConfig
    enc: Encoder
    dec: Decoder
    idm: IDM
    ctrl: Optional[Ctrl] = None
    n_actions: int = 0
    params: dict = field(default_factory=dict)

    @property
    def sched(self):
        return make_schedule(self.cfg.model.freqs, self.cfg.model.freq_base)

    def world_params(self):
        return {k: v for k, v in self.params.items() if not k.startswith("ctrl.")}

    def ctrl_params(self):
        return {k: v for k, v in self.params.items() if k.startswith("ctrl.")}


def build_bundle(cfg, seed=None, n_actions=0):
    """Fresh models from one seeded generator; ctrl only when n_actions > 0."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params = {}
    enc = Encoder(cfg, rng, params)
    dec = Decoder(cfg, rng, params)
    idm = IDM(cfg, rng, params)
    ctrl = Ctrl(cfg, rng, params, n_actions) if n_actions > 0 else None
    return Bundle(cfg=cfg, enc=enc, dec=dec, idm=idm, ctrl=ctrl,
                  n_actions=n_actions, params=params)

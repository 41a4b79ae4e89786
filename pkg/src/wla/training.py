"""Two-phase training and checkpoint persistence.

Phase 1 (unsupervised): encode a window, align slots by least action, infer
per-step generator rates with the IDM, integrate them in the log domain, and
decode one-shot predictions of every frame both forward from the first latent
and backward from the last. Loss is mean-per-pixel squared error of both
directions plus an L1 sparsity penalty on the expanded generator field.

Phase 2 (controller adaptation): the world model is frozen; a causal
controller maps latent/action history to the rates the frozen IDM inferred,
with an additional rollout reconstruction term from frame 0.

Checkpoints: magic "WLAC", version u32 LE, length-prefixed UTF-8 JSON
metadata (config, action count, tensor index name -> offset/shape/count),
then concatenated raw little-endian float32 blobs. Writes are atomic.
"""

import json
import os
import struct
import time

import numpy as np

from . import dynamics
from . import tensor as tz
from .config import ModelConfig, TrainConfig, train_config_from_dict, train_config_to_dict
from .models import Bundle, build_bundle

CKPT_MAGIC = b"WLAC"
CKPT_VERSION = 1


def lr_at(step, total_steps, cfg):
    """Linear warmup from the floor to peak, then cosine back to the floor."""
    warmup = max(1, int(round(total_steps * cfg.warmup_frac)))
    if step < warmup:
        return cfg.lr_floor + (cfg.lr - cfg.lr_floor) * (step + 1) / warmup
    span = max(1, total_steps - warmup)
    frac = min(1.0, (step - warmup) / span)
    return cfg.lr_floor + 0.5 * (cfg.lr - cfg.lr_floor) * (1.0 + np.cos(np.pi * frac))


def _expand_rates_t(lam, the, ratios_f32):
    """Rates [..., J] tensors -> per-plane fields [..., J, F] (graph ops)."""
    shape = lam.shape + (1,)
    ones = np.ones(ratios_f32.shape[0], np.float32)
    lam_f = lam.reshape(shape) * tz.Tensor(ones)
    the_f = the.reshape(shape) * tz.Tensor(ratios_f32)
    return lam_f, the_f


def phase1_loss(bundle, frames, cfg, step_delta=None):
    """Loss graph for one batch of windows.

    frames: [B, T, H, W, 3] float32 ndarray. Returns (loss, parts dict).
    """
    b, t, h, w, _ = frames.shape
    if t < 2:
        raise ValueError(f"windows need at least 2 frames, got {t}")
    m = cfg.model
    delta = cfg.delta if step_delta is None else step_delta
    ratios = bundle.sched.ratios.astype(np.float32)

    flat = frames.reshape(b * t, h, w, 3)
    z = bundle.enc(tz.Tensor(flat))                       # [B*T, N, D]
    perms = dynamics.align_sequence(
        bundle, z.data.reshape(b, t, m.slots, m.latent_dim))
    z_al = tz.gather_rows(z, perms.reshape(b * t, m.slots))
    z_al = z_al.reshape((b, t, m.slots, m.latent_dim))

    za = z_al[:, :-1]
    zb = z_al[:, 1:]
    lam, the = bundle.idm(za, zb)                         # [B, S, N, J]
    if cfg.ablate_no_rotation:
        the = the * 0.0
    lam_f, the_f = _expand_rates_t(lam, the, ratios)      # [B, S, N, J, F]

    dl = lam_f * float(delta)
    dt_ = the_f * float(delta)
    pre_l = tz.cumsum(dl, axis=1)                         # prefix sums over steps
    pre_t = tz.cumsum(dt_, axis=1)
    z0p = z_al[:, 0:1].reshape((b, 1, m.slots, m.planes, m.freqs, 2))
    zf = tz.rotscale(pre_l, pre_t, z0p)                   # [B, S, N, J, F, 2]
    zf = zf.reshape((b, t - 1, m.slots, m.latent_dim))

    # suffix sums: sum_{l>=s} = total - prefix + own step
    tot_l = pre_l[:, -1:]
    tot_t = pre_t[:, -1:]
    suf_l = (tot_l - pre_l + dl) * -1.0
    suf_t = (tot_t - pre_t + dt_) * -1.0
    zTp = z_al[:, -1:].reshape((b, 1, m.slots, m.planes, m.freqs, 2))
    zbk = tz.rotscale(suf_l, suf_t, zTp)
    zbk = zbk.reshape((b, t - 1, m.slots, m.latent_dim))

    fwd_lat = tz.concat([z_al[:, 0:1], zf], axis=1)       # [B, T, N, D]
    bwd_lat = tz.concat([zbk, z_al[:, -1:]], axis=1)
    dec_in = tz.concat([fwd_lat.reshape((b * t, m.slots, m.latent_dim)),
                        bwd_lat.reshape((b * t, m.slots, m.latent_dim))], axis=0)
    comp, _, _ = bundle.dec(dec_in)                       # [2*B*T, H, W, 3]
    target = tz.Tensor(flat)
    l_fwd = ((comp[:b * t] - target) ** 2).mean()
    l_bwd = ((comp[b * t:] - target) ** 2).mean()
    l1 = tz.tabs(lam_f).mean() + tz.tabs(the_f).mean()
    loss = l_fwd + l_bwd + cfg.sparsity_alpha * l1
    parts = {"l_fwd": float(l_fwd.data), "l_bwd": float(l_bwd.data),
             "l1": float(l1.data)}
    return loss, parts


def _window_frames(dataset_frames, cfg):
    """Apply temporal stride and clip to the training window length."""
    f = dataset_frames[:, ::cfg.time_stride]
    if f.shape[1] < cfg.window:
        raise ValueError(f"trajectories give {f.shape[1]} frames at stride "
                         f"{cfg.time_stride}, need window {cfg.window}")
    return np.ascontiguousarray(f[:, :cfg.window])


def _micro_slices(bsz, micro):
    if micro <= 0 or micro >= bsz:
        return [slice(0, bsz)]
    return [slice(i, min(i + micro, bsz)) for i in range(0, bsz, micro)]


def train_world(dataset_frames, cfg, out_dir=None, log=None):
    """Phase-1 training. dataset_frames: [n, T, H, W, 3] float32.

    Returns (bundle, history). history has per-epoch records and counters;
    identical seeds yield identical histories.
    """
    if len(dataset_frames) == 0:
        raise ValueError("dataset is empty")
    cfg.validate()
    frames = _window_frames(dataset_frames, cfg)
    step_delta = cfg.delta * cfg.time_stride
    n = frames.shape[0]
    bundle = build_bundle(cfg)
    opt = tz.AdamW(bundle.world_params(), lr=cfg.lr,
                   weight_decay=cfg.weight_decay)
    order_rng = np.random.default_rng(cfg.seed + 1)
    steps_per_epoch = (n + cfg.batch - 1) // cfg.batch
    total_steps = steps_per_epoch * cfg.epochs
    history = {"epochs": [], "skipped_batches": 0, "skipped_steps": 0,
               "seconds": 0.0}
    t0 = time.process_time()
    step = 0
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(n)
        ep_loss = 0.0
        ep_parts = {"l_fwd": 0.0, "l_bwd": 0.0, "l1": 0.0}
        ep_count = 0
        for bi in range(steps_per_epoch):
            idx = order[bi * cfg.batch:(bi + 1) * cfg.batch]
            batch = frames[idx]
            opt.zero_grad()
            used = 0
            for sl in _micro_slices(batch.shape[0], cfg.micro_batch):
                loss, parts = phase1_loss(bundle, batch[sl], cfg, step_delta)
                if not np.isfinite(loss.data):
                    history["skipped_batches"] += 1
                    continue
                loss.backward()
                ep_loss += float(loss.data)
                for k in ep_parts:
                    ep_parts[k] += parts[k]
                used += 1
                ep_count += 1
            if used == 0:
                continue
            if not opt.step(lr=lr_at(step, total_steps, cfg)):
                history["skipped_steps"] += 1
            step += 1
        rec = {"epoch": epoch, "loss": ep_loss / max(ep_count, 1),
               "lr": lr_at(min(step, total_steps - 1), total_steps, cfg),
               "seconds": time.process_time() - t0}
        for k in ep_parts:
            rec[k] = ep_parts[k] / max(ep_count, 1)
        history["epochs"].append(rec)
        if log:
            log(f"epoch {epoch}: loss {rec['loss']:.5f} "
                f"(fwd {rec['l_fwd']:.5f} bwd {rec['l_bwd']:.5f}) "
                f"lr {rec['lr']:.2e} {rec['seconds']:.0f}s")
        if out_dir:
            save_checkpoint(bundle, os.path.join(out_dir, "world.wlac"),
                            extra={"history": history})
    history["seconds"] = time.process_time() - t0
    return bundle, history


def phase2_loss(bundle, frames, actions, cfg):
    """Controller loss graph for one labeled batch.

    frames: [B, T, H, W, 3]; actions: [B, T] int (action[t] drives t -> t+1).
    The world model runs without gradients; only ctrl tensors join the graph.
    """
    if bundle.ctrl is None:
        raise ValueError("bundle has no controller")
    if actions is None or np.any(actions[:, :-1] < 0):
        raise ValueError("phase-2 requires action labels on every step")
    b, t, h, w, _ = frames.shape
    m = cfg.model
    ratios = bundle.sched.ratios.astype(np.float32)

    z = bundle.enc.encode_np(frames.reshape(b * t, h, w, 3))
    z = z.reshape(b, t, m.slots, m.latent_dim)
    perms = dynamics.align_sequence(bundle, z)
    z_al = dynamics.apply_perms(z, perms)
    lam_t, the_t = bundle.idm.infer_np(z_al[:, :-1], z_al[:, 1:])
    if cfg.ablate_no_rotation:
        the_t = np.zeros_like(the_t)

    lam_c, the_c = bundle.ctrl(tz.Tensor(z_al[:, :-1]), actions[:, :t - 1])
    l_adapt = (((lam_c - tz.Tensor(lam_t)) ** 2).mean()
               + ((the_c - tz.Tensor(the_t)) ** 2).mean())

    lam_f, the_f = _expand_rates_t(lam_c, the_c, ratios)
    pre_l = tz.cumsum(lam_f * cfg.delta, axis=1)
    pre_t = tz.cumsum(the_f * cfg.delta, axis=1)
    z0p = tz.Tensor(z_al[:, 0:1].reshape(b, 1, m.slots, m.planes, m.freqs, 2))
    zf = tz.rotscale(pre_l, pre_t, z0p).reshape((b * (t - 1), m.slots, m.latent_dim))
    comp, _, _ = bundle.dec(zf)
    target = tz.Tensor(np.ascontiguousarray(frames[:, 1:]).reshape(
        b * (t - 1), h, w, 3))
    l_rec = ((comp - target) ** 2).mean()
    loss = l_adapt + cfg.rec_weight * l_rec
    return loss, {"l_adapt": float(l_adapt.data), "l_rec": float(l_rec.data)}


def train_ctrl(dataset_frames, dataset_actions, bundle, cfg, n_actions,
               out_dir=None, log=None):
    """Phase-2 training; mutates only ctrl parameters, adds ctrl to bundle."""
    if len(dataset_frames) == 0:
        raise ValueError("dataset is empty")
    frames = _window_frames(dataset_frames, cfg)
    actions = dataset_actions[:, ::cfg.time_stride][:, :cfg.window]
    if bundle.ctrl is None:
        rng = np.random.default_rng(cfg.seed + 2)
        from .models import Ctrl
        bundle.ctrl = Ctrl(cfg, rng, bundle.params, n_actions)
        bundle.n_actions = int(n_actions)
    opt = tz.AdamW(bundle.ctrl_params(), lr=cfg.lr,
                   weight_decay=cfg.weight_decay)
    order_rng = np.random.default_rng(cfg.seed + 3)
    n = frames.shape[0]
    steps_per_epoch = (n + cfg.batch - 1) // cfg.batch
    total_steps = steps_per_epoch * cfg.ctrl_epochs
    history = {"epochs": [], "skipped_batches": 0, "skipped_steps": 0,
               "seconds": 0.0}
    t0 = time.process_time()
    step = 0
    for epoch in range(cfg.ctrl_epochs):
        order = order_rng.permutation(n)
        ep = {"loss": 0.0, "l_adapt": 0.0, "l_rec": 0.0}
        count = 0
        for bi in range(steps_per_epoch):
            idx = order[bi * cfg.batch:(bi + 1) * cfg.batch]
            opt.zero_grad()
            for p in bundle.params.values():
                p.grad = None
            used = 0
            for sl in _micro_slices(len(idx), cfg.micro_batch):
                loss, parts = phase2_loss(bundle, frames[idx][sl],
                                          actions[idx][sl], cfg)
                if not np.isfinite(loss.data):
                    history["skipped_batches"] += 1
                    continue
                loss.backward()
                ep["loss"] += float(loss.data)
                ep["l_adapt"] += parts["l_adapt"]
                ep["l_rec"] += parts["l_rec"]
                used += 1
                count += 1
            if used == 0:
                continue
            if not opt.step(lr=lr_at(step, total_steps, cfg)):
                history["skipped_steps"] += 1
            step += 1
        rec = {"epoch": epoch, "seconds": time.process_time() - t0}
        rec.update({k: v / max(count, 1) for k, v in ep.items()})
        history["epochs"].append(rec)
        if log:
            log(f"ctrl epoch {epoch}: loss {rec['loss']:.5f} "
                f"(adapt {rec['l_adapt']:.5f} rec {rec['l_rec']:.5f})")
        if out_dir:
            save_checkpoint(bundle, os.path.join(out_dir, "ctrl.wlac"),
                            extra={"history": history})
    history["seconds"] = time.process_time() - t0
    return bundle, history


# -- checkpoint persistence ----------------------------------------------


def save_checkpoint(bundle, path, extra=None):
    names = sorted(bundle.params)
    index = {}
    blobs = []
    offset = 0
    for name in names:
        data = np.ascontiguousarray(bundle.params[name].data, "<f4")
        index[name] = {"offset": offset, "shape": list(data.shape),
                       "count": int(data.size)}
        blobs.append(data.tobytes())
        offset += data.size * 4
    meta = {"format_version": CKPT_VERSION,
            "config": train_config_to_dict(bundle.cfg),
            "n_actions": int(bundle.n_actions),
            "tensors": index}
    if extra:
        meta["extra"] = extra
    mb = json.dumps(meta).encode("utf-8")
    payload = CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(mb)) + mb + b"".join(blobs)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(payload)
    os.replace(tmp, path)


def load_checkpoint(path, expect_model=None):
    """Rebuild a Bundle from disk; every tensor must match bit-exactly.

    expect_model: optional ModelConfig cross-checked against the stored one,
    mismatches rejected with the differing fields named.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 12:
        raise ValueError(f"{path}: truncated header")
    version, meta_len = struct.unpack_from("<II", blob, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    if len(blob) < 12 + meta_len:
        raise ValueError(f"{path}: truncated metadata")
    try:
        meta = json.loads(blob[12:12 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValueError(f"{path}: corrupt metadata: {e}")
    cfg = train_config_from_dict(meta["config"])
    if expect_model is not None:
        got = train_config_to_dict(cfg)["model"]
        want = {f: getattr(expect_model, f) for f in got}
        diffs = {k: (got[k], want[k]) for k in got if got[k] != want[k]}
        if diffs:
            raise ValueError(f"{path}: model config mismatch: {diffs}")
    bundle = build_bundle(cfg, n_actions=int(meta.get("n_actions", 0)))
    index = meta["tensors"]
    missing = sorted(set(bundle.params) - set(index))
    if missing:
        raise ValueError(f"{path}: missing tensors {missing[:4]}")
    extra_t = sorted(set(index) - set(bundle.params))
    if extra_t:
        raise ValueError(f"{path}: unexpected tensors {extra_t[:4]}")
    base = 12 + meta_len
    blob_len = len(blob) - base
    for name in sorted(index):
        ent = index[name]
        want_shape = tuple(ent["shape"])
        have = bundle.params[name]
        if want_shape != have.data.shape:
            raise ValueError(f"{path}: tensor {name} shape {want_shape} != "
                             f"model shape {have.data.shape}")
        count = int(ent["count"])
        if count != int(np.prod(want_shape, dtype=np.int64)):
            raise ValueError(f"{path}: tensor {name} count/shape disagree")
        off = int(ent["offset"])
        if off < 0 or off + count * 4 > blob_len:
            raise ValueError(f"{path}: tensor {name} overruns the data block")
        arr = np.frombuffer(blob, "<f4", count, base + off).reshape(want_shape)
        have.data = arr.copy()
    return bundle


def checkpoint_meta(path):
    """Read just the JSON metadata of a checkpoint."""
    with open(path, "rb") as f:
        head = f.read(12)
        if head[:4] != CKPT_MAGIC or len(head) < 12:
            raise ValueError(f"{path}: not a checkpoint")
        version, meta_len = struct.unpack("<II", head[4:])
        if version != CKPT_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        return json.loads(f.read(meta_len).decode("utf-8"))

"""Synthetic 2-D sprite environments, trajectory generation, and the on-disk
dataset format.

Four families share one kinematic core: "drift" (constant-velocity sprites,
torus borders), "spinscale" (one square rotating and scaling at constant
rates), "pilot" (categorical actions steer one sprite among drifting
distractors), and "bounce" (gravity with elastic border reflection). Dynamics
are exactly deterministic: (state, action) fully determines the next state,
and rendering equal states yields identical bytes.

Trajectory files are little-endian: magic "WLAT", version u32, T/H/W/C u32,
action_kind u32 (0 none, 1 categorical, 2 continuous), action_dim u32, then
timestamps f32[T], frames f32[T*H*W*C], and actions (i32[T] categorical or
f32[T*action_dim] continuous). A dataset directory holds trajectory files
plus a JSON manifest listing files, env ids, and seen/unseen split tags.
"""

import dataclasses
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .kernels import render_frame

TRAJ_MAGIC = b"WLAT"
TRAJ_VERSION = 1

_PALETTE_SEEN = ((0.92, 0.25, 0.21), (0.22, 0.85, 0.35), (0.25, 0.5, 0.95),
                 (0.95, 0.83, 0.2), (0.85, 0.85, 0.9))
_PALETTE_UNSEEN = ((0.2, 0.9, 0.9), (0.9, 0.25, 0.85), (0.95, 0.55, 0.15),
                   (0.55, 0.95, 0.65), (0.7, 0.7, 0.3))

PILOT_ACTIONS = ("noop", "left", "right", "up", "down")


@dataclass
class EnvSpec:
    env_id: str
    dynamics: str                 # velocity | action | gravity
    image_hw: int = 32
    delta: float = 1.0
    action_kind: int = 0
    n_actions: int = 0
    min_sprites: int = 2
    max_sprites: int = 3
    size_lo: float = 2.0
    size_hi: float = 4.5
    speed: float = 1.6
    palette: tuple = _PALETTE_SEEN
    bg: tuple = (0.06, 0.06, 0.1)
    wrap: bool = True
    gravity: float = 0.0
    ctrl_speed: float = 3.0
    spin_max: float = 0.45
    scale_rate_max: float = 0.04
    distractors: int = 2
    unseen: bool = False


def make_env(env_id, **overrides):
    base_id, _, variant = env_id.partition("-")
    if base_id == "drift":
        spec = EnvSpec(env_id=env_id, dynamics="velocity", min_sprites=2,
                       max_sprites=3, wrap=True)
    elif base_id == "spinscale":
        spec = EnvSpec(env_id=env_id, dynamics="velocity", min_sprites=1,
                       max_sprites=1, size_lo=4.0, size_hi=6.0, speed=0.4,
                       wrap=False)
    elif base_id == "pilot":
        spec = EnvSpec(env_id=env_id, dynamics="action", action_kind=1,
                       n_actions=5, min_sprites=1, max_sprites=1, speed=0.8,
                       wrap=True)
    elif base_id == "bounce":
        spec = EnvSpec(env_id=env_id, dynamics="gravity", min_sprites=1,
                       max_sprites=2, speed=1.0, wrap=False, gravity=0.5)
    else:
        raise ValueError(f"unknown env id {env_id!r}")
    if variant == "unseen":
        spec = dataclasses.replace(spec, palette=_PALETTE_UNSEEN,
                                   speed=spec.speed * 1.3, unseen=True)
    elif variant:
        raise ValueError(f"unknown env variant {variant!r} in {env_id!r}")
    if overrides:
        spec = dataclasses.replace(spec, **overrides)
    return spec


@dataclass
class EnvState:
    kinds: np.ndarray      # [S] 0 disc, 1 square
    pos: np.ndarray        # [S, 2] pixel centers (x, y)
    vel: np.ndarray        # [S, 2] pixels per time unit
    half: np.ndarray       # [S] radius or half-side
    angle: np.ndarray      # [S]
    spin: np.ndarray       # [S] rad per time unit
    srate: np.ndarray      # [S] log-scale per time unit
    colors: np.ndarray     # [S, 3]
    controlled: int = -1

    def copy(self):
        return EnvState(self.kinds.copy(), self.pos.copy(), self.vel.copy(),
                        self.half.copy(), self.angle.copy(), self.spin.copy(),
                        self.srate.copy(), self.colors.copy(), self.controlled)


def init_state(spec, rng):
    hw = spec.image_hw
    if spec.dynamics == "action":
        count = 1 + spec.distractors
    else:
        count = int(rng.integers(spec.min_sprites, spec.max_sprites + 1))
    kinds = rng.integers(0, 2, count).astype(np.int64)
    pos = rng.uniform(4.0, hw - 4.0, (count, 2))
    half = rng.uniform(spec.size_lo, spec.size_hi, count)
    angle = rng.uniform(0.0, np.pi, count)
    spin = np.zeros(count)
    srate = np.zeros(count)
    speed = rng.uniform(0.4 * spec.speed, spec.speed, count)
    direction = rng.uniform(0.0, 2.0 * np.pi, count)
    vel = np.stack([speed * np.cos(direction), speed * np.sin(direction)], 1)
    ci = np.asarray(spec.palette)[rng.integers(0, len(spec.palette), count)]
    controlled = -1
    if spec.env_id.startswith("spinscale"):
        kinds[:] = 1
        pos = hw / 2.0 + rng.uniform(-3.0, 3.0, (count, 2))
        vel[:] = 0.0
        spin = rng.uniform(-spec.spin_max, spec.spin_max, count)
        spin += np.sign(spin + 1e-9) * 0.15  # keep rotation visible
        srate = rng.uniform(-spec.scale_rate_max, spec.scale_rate_max, count)
    if spec.dynamics == "action":
        controlled = 0
        kinds[0] = 0
        half[0] = 3.0
        ci[0] = (0.97, 0.97, 0.97)
        vel[0] = 0.0
        if count > 1:
            dim = rng.uniform(0.35, 0.6)
            ci[1:] *= dim
    if spec.dynamics == "gravity":
        pos[:, 1] = rng.uniform(4.0, hw * 0.45, count)
        vel[:, 1] = rng.uniform(-0.5, 0.5, count)
        kinds[:] = 0
    return EnvState(kinds, pos, vel, half, angle, spin, srate, ci, controlled)


def _action_velocity(action, spec):
    v = spec.ctrl_speed
    table = {0: (0.0, 0.0), 1: (-v, 0.0), 2: (v, 0.0), 3: (0.0, -v), 4: (0.0, v)}
    return np.asarray(table[action])


def step_env(state, action, spec):
    """Advance one step of duration spec.delta. Pure: returns a new state."""
    s = state.copy()
    dt = spec.delta
    if spec.action_kind == 1:
        if action is None or not (0 <= int(action) < spec.n_actions):
            raise ValueError(f"invalid action {action!r} for {spec.env_id}")
        s.vel[s.controlled] = _action_velocity(int(action), spec)
    elif action not in (None, 0):
        raise ValueError(f"env {spec.env_id} takes no actions, got {action!r}")
    if spec.dynamics == "gravity":
        acc = np.array([0.0, spec.gravity])
        s.pos = s.pos + s.vel * dt + 0.5 * acc * dt * dt
        s.vel = s.vel + acc * dt
    else:
        s.pos = s.pos + s.vel * dt
    hw = float(spec.image_hw)
    if spec.wrap:
        s.pos = np.mod(s.pos, hw)
    else:
        if spec.dynamics == "gravity":
            for i in range(s.pos.shape[0]):
                for ax in range(2):
                    lo, hi = s.half[i], hw - s.half[i]
                    p = s.pos[i, ax]
                    # elastic mirror; loop handles deep overshoot
                    while p < lo or p > hi:
                        if p < lo:
                            p = 2.0 * lo - p
                        else:
                            p = 2.0 * hi - p
                        s.vel[i, ax] = -s.vel[i, ax]
                    s.pos[i, ax] = p
    s.angle = s.angle + s.spin * dt
    s.half = np.clip(s.half * np.exp(s.srate * dt), 0.75, hw * 0.45)
    return s


def render_state(state, spec):
    return render_frame(state.kinds, state.pos[:, 0], state.pos[:, 1],
                        state.half, state.angle, state.colors,
                        np.asarray(spec.bg), spec.image_hw, spec.image_hw,
                        spec.wrap)


def sample_actions(spec, length, rng):
    """Categorical action script with 2-4 step persistence segments."""
    acts = np.zeros(length, np.int32)
    t = 0
    while t < length:
        k = int(rng.integers(2, 5))
        acts[t:t + k] = int(rng.integers(0, spec.n_actions))
        t += k
    return acts


def rollout_env(spec, length, rng):
    """Generate one trajectory: frames [T, H, W, 3], taus [T], actions."""
    if length < 2:
        raise ValueError(f"trajectory length must be >= 2, got {length}")
    state = init_state(spec, rng)
    actions = sample_actions(spec, length, rng) if spec.action_kind == 1 else None
    hw = spec.image_hw
    frames = np.empty((length, hw, hw, 3), np.float32)
    frames[0] = render_state(state, spec)
    for t in range(1, length):
        act = int(actions[t - 1]) if actions is not None else None
        state = step_env(state, act, spec)
        frames[t] = render_state(state, spec)
    taus = (np.arange(length) * spec.delta).astype(np.float32)
    return frames, taus, actions


# -- trajectory files ----------------------------------------------------


def write_trajectory(path, frames, taus, actions=None, action_kind=0,
                     action_dim=0):
    frames = np.ascontiguousarray(frames, np.float32)
    taus = np.ascontiguousarray(taus, np.float32)
    t, h, w, c = frames.shape
    if taus.shape != (t,):
        raise ValueError(f"timestamps shape {taus.shape} does not match T={t}")
    parts = [TRAJ_MAGIC,
             struct.pack("<7I", TRAJ_VERSION, t, h, w, c, action_kind, action_dim),
             taus.astype("<f4").tobytes(),
             frames.astype("<f4").tobytes()]
    if action_kind == 1:
        acts = np.ascontiguousarray(actions, np.int32)
        if acts.shape != (t,):
            raise ValueError(f"actions shape {acts.shape} does not match T={t}")
        parts.append(acts.astype("<i4").tobytes())
    elif action_kind == 2:
        acts = np.ascontiguousarray(actions, np.float32)
        if acts.shape != (t, action_dim):
            raise ValueError(f"actions shape {acts.shape} does not match ({t}, {action_dim})")
        parts.append(acts.astype("<f4").tobytes())
    elif actions is not None:
        raise ValueError("actions given but action_kind is 0")
    blob = b"".join(parts)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)


def read_trajectory(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != TRAJ_MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 32:
        raise ValueError(f"{path}: truncated header")
    version, t, h, w, c, action_kind, action_dim = struct.unpack_from("<7I", blob, 4)
    if version != TRAJ_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    off = 32
    expect = t * 4 + t * h * w * c * 4
    if action_kind == 1:
        expect += t * 4
    elif action_kind == 2:
        expect += t * action_dim * 4
    elif action_kind != 0:
        raise ValueError(f"{path}: unknown action_kind {action_kind}")
    if len(blob) - off != expect:
        raise ValueError(f"{path}: payload length {len(blob) - off} != expected {expect}")
    taus = np.frombuffer(blob, "<f4", t, off).copy()
    off += t * 4
    frames = np.frombuffer(blob, "<f4", t * h * w * c, off).reshape(t, h, w, c).copy()
    off += t * h * w * c * 4
    actions = None
    if action_kind == 1:
        actions = np.frombuffer(blob, "<i4", t, off).copy()
    elif action_kind == 2:
        actions = np.frombuffer(blob, "<f4", t * action_dim, off).reshape(t, action_dim).copy()
    return {"frames": frames, "taus": taus, "actions": actions,
            "action_kind": int(action_kind), "action_dim": int(action_dim)}


# -- dataset generation --------------------------------------------------


def generate(entries, length, seed, out_dir):
    """Write a corpus: entries = [(EnvSpec, count), ...]. Returns manifest.

    Trajectory i of the corpus uses rng seeded by (seed, i), so any subset is
    reproducible independently and equal seeds give identical bytes.
    """
    os.makedirs(out_dir, exist_ok=True)
    files = []
    idx = 0
    for spec, count in entries:
        if count < 1:
            raise ValueError(f"count must be >= 1, got {count}")
        for _ in range(count):
            rng = np.random.default_rng((seed, idx))
            frames, taus, actions = rollout_env(spec, length, rng)
            name = f"traj_{idx:05d}.wlat"
            write_trajectory(os.path.join(out_dir, name), frames, taus,
                             actions, spec.action_kind)
            files.append({"file": name, "env_id": spec.env_id,
                          "split": "unseen" if spec.unseen else "seen"})
            idx += 1
    manifest = {
        "format": 1,
        "seed": int(seed),
        "length": int(length),
        "image_hw": int(entries[0][0].image_hw),
        "delta": float(entries[0][0].delta),
        "env_ids": sorted({spec.env_id for spec, _ in entries}),
        "n_actions": max(spec.n_actions for spec, _ in entries),
        "files": files,
    }
    tmp = os.path.join(out_dir, "manifest.json.tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    os.replace(tmp, os.path.join(out_dir, "manifest.json"))
    return manifest


class Dataset:
    """In-memory view of a dataset directory."""

    def __init__(self, frames, taus, actions, env_ids, splits, manifest):
        self.frames = frames          # [n, T, H, W, 3] float32
        self.taus = taus              # [n, T]
        self.actions = actions        # [n, T] int32, -1 where unlabeled
        self.env_ids = env_ids        # [n] array of str
        self.splits = splits          # [n] array of str
        self.manifest = manifest

    def __len__(self):
        return self.frames.shape[0]

    @property
    def n_actions(self):
        return int(self.manifest.get("n_actions", 0))

    def select(self, env_id=None, split=None):
        mask = np.ones(len(self), bool)
        if env_id is not None:
            mask &= np.char.startswith(self.env_ids.astype(str), env_id)
        if split is not None:
            mask &= self.splits == split
        idx = np.flatnonzero(mask)
        return Dataset(self.frames[idx], self.taus[idx], self.actions[idx],
                       self.env_ids[idx], self.splits[idx], self.manifest)


def load_dataset(path):
    man_path = os.path.join(path, "manifest.json")
    with open(man_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    frames, taus, actions, env_ids, splits = [], [], [], [], []
    for entry in manifest["files"]:
        rec = read_trajectory(os.path.join(path, entry["file"]))
        frames.append(rec["frames"])
        taus.append(rec["taus"])
        if rec["action_kind"] == 1:
            actions.append(rec["actions"].astype(np.int32))
        else:
            actions.append(np.full(rec["frames"].shape[0], -1, np.int32))
        env_ids.append(entry["env_id"])
        splits.append(entry.get("split", "seen"))
    return Dataset(np.stack(frames), np.stack(taus), np.stack(actions),
                   np.asarray(env_ids), np.asarray(splits), manifest)

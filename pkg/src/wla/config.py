"""Model and training configuration with strict JSON round-tripping.

Config files must contain exactly the known keys; unknown keys are rejected so
typos fail loudly instead of silently training the wrong model.
"""

import dataclasses
import json
from dataclasses import dataclass, field


@dataclass
class ModelConfig:
    image_hw: int = 32
    patch: int = 4
    width: int = 128
    enc_depth: int = 4
    dec_depth: int = 4
    mlp_ratio: int = 4
    heads: int = 4
    slots: int = 4
    planes: int = 4        # toric components per slot (J~)
    freqs: int = 4         # frequencies per component (F)
    freq_base: float = 100.0
    slot_iters: int = 3
    idm_hidden: int = 128

    @property
    def latent_dim(self):
        return 2 * self.planes * self.freqs

    @property
    def grid(self):
        return self.image_hw // self.patch

    def validate(self):
        if self.image_hw % self.patch:
            raise ValueError(f"image_hw {self.image_hw} not divisible by patch {self.patch}")
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")
        if self.width % 4:
            raise ValueError(f"width {self.width} must be divisible by 4 for position embeddings")
        return self


@dataclass
class TrainConfig:
    window: int = 8
    batch: int = 16
    micro_batch: int = 0   # 0 means the full batch in one graph
    epochs: int = 20
    lr: float = 5e-4
    lr_floor: float = 1e-5
    warmup_frac: float = 0.1
    weight_decay: float = 0.1
    sparsity_alpha: float = 0.01
    delta: float = 1.0
    seed: int = 0
    time_stride: int = 1   # >1 trains on temporally subsampled frames
    ablate_no_rotation: bool = False
    ablate_no_least_action: bool = False
    ctrl_width: int = 96
    ctrl_depth: int = 2
    ctrl_heads: int = 4
    ctrl_action_embed: int = 16
    ctrl_epochs: int = 10
    rec_weight: float = 1.0
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self):
        if self.window < 2:
            raise ValueError(f"window must be >= 2, got {self.window}")
        if self.sparsity_alpha < 0:
            raise ValueError("sparsity_alpha must be >= 0")
        self.model.validate()
        return self


def _from_dict(cls, d, where):
    if not isinstance(d, dict):
        raise ValueError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = dict(d)
    if cls is TrainConfig and "model" in kwargs:
        kwargs["model"] = _from_dict(ModelConfig, kwargs["model"], where + ".model")
    return cls(**kwargs)


def train_config_from_dict(d):
    return _from_dict(TrainConfig, d, "config").validate()


def train_config_to_dict(cfg):
    return dataclasses.asdict(cfg)


def load_train_config(path):
    with open(path, "r", encoding="utf-8") as f:
        return train_config_from_dict(json.load(f))


def save_train_config(cfg, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(train_config_to_dict(cfg), f, indent=2)

"""CNN stem -> T-Sa -> LCT stack -> pooled linear classifier."""
from __future__ import annotations

import copy
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from . import functional as F
from .lct import LCT, LctConfig
from .nn import BatchNorm2d, Conv2d, Linear, Module
from .tensor import ConfigError, ShapeError, Tensor
from .tsa import TSA, TsaConfig

# Ablation rows of the comparison table; each touches only the flags it names.
PRESETS: dict[str, dict[str, dict[str, object]]] = {
    "full": {},
    "wo_tsa": {"tsa": {"enabled": False}},
    "wo_lstm_attention": {"tsa": {"timing_enabled": False}},
    "wo_lct": {"lct": {"enabled": False}},
    "w_conv_lct": {"lct": {"llc_mode": "conv3x3"}},
    "wo_ca": {"lct": {"ca_enabled": False}},
    "wo_se": {"lct": {"se_enabled": False}},
}


@dataclass
class ModelConfig:
    num_classes: int = 4
    n_mfcc: int = 26
    n_frames: int = 178
    stem_branch_channels: int = 16
    # (kernel, out_channels, pool) per stage after the parallel 3x1 / 1x3 pair
    cnn_stem: list = field(default_factory=lambda: [[3, 64, True], [3, 128, True]])
    tsa: TsaConfig = field(default_factory=TsaConfig)
    lct: LctConfig = field(default_factory=LctConfig)

    @property
    def trunk_channels(self) -> int:
        return int(self.cnn_stem[-1][1]) if self.cnn_stem else 2 * self.stem_branch_channels

    def stem_output_hw(self) -> tuple[int, int]:
        h, w = self.n_mfcc, self.n_frames
        for _, _, pool in self.cnn_stem:
            if pool:
                h, w = h // 2, w // 2
        return h, w

    def validate(self) -> None:
        if self.num_classes not in (4, 7):
            raise ConfigError(f"num_classes must be 4 or 7, got {self.num_classes}")
        if self.trunk_channels != self.lct.channels:
            raise ConfigError(
                f"trunk has {self.trunk_channels} channels but LCT expects {self.lct.channels}"
            )
        h, w = self.stem_output_hw()
        if h < 1 or w < 1:
            raise ConfigError(f"input {self.n_mfcc}x{self.n_frames} is too small for the stem")
        if self.tsa.enabled:
            self.tsa.validate(self.trunk_channels, h)
        self.lct.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        tsa = TsaConfig(**d.pop("tsa", {}))
        lct = LctConfig(**d.pop("lct", {}))
        return cls(tsa=tsa, lct=lct, **d)

    @classmethod
    def miniature(cls, num_classes: int = 4, n_frames: int = 178, **lct_overrides) -> "ModelConfig":
        """16-channel variant used for desk-scale training and gradient checks."""
        lct = LctConfig(channels=16, heads=2, ca_reduction=4, num_blocks=1)
        for k, v in lct_overrides.items():
            setattr(lct, k, v)
        return cls(
            num_classes=num_classes,
            n_frames=n_frames,
            stem_branch_channels=4,
            cnn_stem=[[3, 8, True], [3, 16, True]],
            tsa=TsaConfig(groups=2),
            lct=lct,
        )


def apply_preset(cfg: ModelConfig, name: str) -> ModelConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    out = copy.deepcopy(cfg)
    for section, flags in PRESETS[name].items():
        sub = getattr(out, section)
        for key, value in flags.items():
            setattr(sub, key, value)
    return out


class CNNBlock(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        b = cfg.stem_branch_channels
        self.freq_conv = Conv2d(1, b, (3, 1), rng, padding=(1, 0))
        self.freq_bn = BatchNorm2d(b)
        self.time_conv = Conv2d(1, b, (1, 3), rng, padding=(0, 1))
        self.time_bn = BatchNorm2d(b)
        self.stages = []
        in_ch = 2 * b
        for i, (k, out_ch, pool) in enumerate(cfg.cnn_stem):
            conv = Conv2d(in_ch, int(out_ch), int(k), rng, padding=int(k) // 2)
            bn = BatchNorm2d(int(out_ch))
            setattr(self, f"conv{i}", conv)
            setattr(self, f"bn{i}", bn)
            self.stages.append((conv, bn, bool(pool)))
            in_ch = int(out_ch)
        self.min_size = 2 ** sum(1 for *_, p in cfg.cnn_stem if p)

    def branches(self, x: Tensor) -> tuple[Tensor, Tensor]:
        return F.relu(self.freq_bn(self.freq_conv(x))), F.relu(self.time_bn(self.time_conv(x)))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-2] < self.min_size or x.shape[-1] < self.min_size:
            raise ShapeError(
                f"CNN block: input {x.shape[-2]}x{x.shape[-1]} smaller than minimum {self.min_size}"
            )
        y = F.concat(list(self.branches(x)), axis=1)
        for conv, bn, pool in self.stages:
            y = F.relu(bn(conv(y)))
            if pool:
                y = F.max_pool2d(y, 2)
        return y


class SERModel(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        h, w = cfg.stem_output_hw()
        C = cfg.trunk_channels
        self.stem = CNNBlock(cfg, rng)
        self.tsa = TSA(C, h, cfg.tsa, rng)
        self.lct = LCT(cfg.lct, h, w, rng)
        self.head = Linear(C, cfg.num_classes, rng)

    def features(self, x: Tensor) -> Tensor:
        return self.lct(self.tsa(self.stem(x)))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"model expects (B, 1, n_mfcc, n_frames), got {x.shape}")
        return self.head(F.global_avg_pool(self.features(x)))


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float64) -> SERModel:
    model = SERModel(cfg, np.random.default_rng(seed))
    if dtype != np.float64:
        model.astype(dtype)
    return model


def parameter_count(model: Module, depth: int = 2) -> tuple[int, "OrderedDict[str, int]"]:
    """Total scalar parameters and a breakdown keyed by module path truncated to ``depth``."""
    breakdown: OrderedDict[str, int] = OrderedDict()
    total = 0
    for name, p in model.named_parameters():
        key = ".".join(name.split(".")[:-1][:depth]) or "<root>"
        breakdown[key] = breakdown.get(key, 0) + p.size
        total += p.size
    return total, breakdown

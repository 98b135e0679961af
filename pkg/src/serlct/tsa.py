"""Timing attention plus grouped space-channel attention with channel shuffle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .nn import BiLSTM, Module, Parameter
from .tensor import ConfigError, Tensor


@dataclass
class TsaConfig:
    groups: int = 8
    enabled: bool = True
    timing_enabled: bool = True

    def validate(self, channels: int, height: int) -> None:
        if self.groups < 1 or channels % self.groups:
            raise ConfigError(f"T-Sa: {self.groups} groups do not divide {channels} channels")
        if (channels // self.groups) % 2:
            raise ConfigError(
                f"T-Sa: {channels // self.groups} channels per group cannot split into two branches"
            )
        if self.timing_enabled and height % 2:
            raise ConfigError(f"T-Sa: feature height {height} is odd; BiLSTM hidden size H/2 is undefined")

    @staticmethod
    def bilstm_hidden(height: int) -> int:
        return height // 2


def channel_branch(xc: Tensor, w1: Tensor, b1: Tensor) -> Tensor:
    """Gate each channel by ``sigmoid(w1 * GAP(xc) + b1)``; ``w1``/``b1`` are per-channel."""
    n = xc.shape[1]
    pooled = F.mean(xc, axis=(2, 3), keepdims=True)
    gate = F.sigmoid(pooled * F.reshape(w1, (1, n, 1, 1)) + F.reshape(b1, (1, n, 1, 1)))
    return xc * gate


def spatial_branch(xs: Tensor, w2: Tensor, b2: Tensor, eps: float = 1e-5) -> Tensor:
    """Gate each position by ``sigmoid(w2 * GN(xs) + b2)``, GN normalising every channel's map."""
    n = xs.shape[1]
    normed = F.group_norm(xs, groups=n, eps=eps)
    gate = F.sigmoid(normed * F.reshape(w2, (1, n, 1, 1)) + F.reshape(b2, (1, n, 1, 1)))
    return xs * gate


class TimingAttention(Module):
    def __init__(self, height: int, rng: np.random.Generator):
        super().__init__()
        if height % 2:
            raise ConfigError(f"timing attention needs an even feature height, got {height}")
        self.height = height
        self.bilstm = BiLSTM(height, height // 2, rng)

    def gate(self, x: Tensor) -> Tensor:
        """Sigmoid gate map of shape ``(B, H, W)``."""
        if x.shape[2] != self.height:
            raise ConfigError(f"timing attention built for H={self.height}, got H={x.shape[2]}")
        pooled = F.mean(x, axis=1)                    # (B, H, W)
        seq = F.transpose(pooled, (0, 2, 1))          # W steps of H-dim vectors
        h = self.bilstm(seq)                          # (B, W, H)
        return F.sigmoid(F.transpose(h, (0, 2, 1)))

    def forward(self, x: Tensor) -> Tensor:
        g = self.gate(x)
        return x * F.reshape(g, (g.shape[0], 1) + g.shape[1:])


class SpaceChannelAttention(Module):
    """Shuffle-attention unit; gate parameters are shared across the groups."""

    def __init__(self, channels: int, groups: int):
        super().__init__()
        if channels % (2 * groups):
            raise ConfigError(f"{channels} channels cannot form {groups} groups of two branches")
        self.channels, self.groups = channels, groups
        half = channels // (2 * groups)
        self.channel_weight = Parameter(np.zeros(half))
        self.channel_bias = Parameter(np.ones(half))
        self.spatial_weight = Parameter(np.zeros(half))
        self.spatial_bias = Parameter(np.ones(half))

    def forward(self, x: Tensor) -> Tensor:
        B, C, H, W = x.shape
        G = self.groups
        per = C // G
        half = per // 2
        xg = F.reshape(x, (B * G, per, H, W))
        xc = channel_branch(xg[:, :half], self.channel_weight, self.channel_bias)
        xs = spatial_branch(xg[:, half:], self.spatial_weight, self.spatial_bias)
        out = F.reshape(F.concat([xc, xs], axis=1), (B, C, H, W))
        return F.channel_shuffle(out, G)


class TSA(Module):
    def __init__(self, channels: int, height: int, cfg: TsaConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.timing = self.space_channel = None
        if cfg.enabled:
            cfg.validate(channels, height)
            if cfg.timing_enabled:
                self.timing = TimingAttention(height, rng)
            self.space_channel = SpaceChannelAttention(channels, cfg.groups)

    def forward(self, x: Tensor) -> Tensor:
        if self.timing is not None:
            x = self.timing(x)
        if self.space_channel is not None:
            x = self.space_channel(x)
        return x

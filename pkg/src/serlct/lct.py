"""Lightweight convolution-transformer block: local mixing, CA-gated
downsampled multi-head attention, and an SE inverted-bottleneck FFN."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import functional as F
from .nn import BatchNorm2d, Conv2d, Linear, Module, Parameter
from .tensor import ConfigError, Tensor

LLC_MODES = ("llc", "conv3x3")


@dataclass
class LctConfig:
    channels: int = 128
    heads: int = 4
    ca_reduction: int = 8
    ffn_expansion: int = 4
    dw_kernel: int = 7
    num_blocks: int = 3
    se_reduction: int = 4
    enabled: bool = True
    ca_enabled: bool = True
    se_enabled: bool = True
    llc_mode: str = "llc"

    def validate(self) -> None:
        C = self.channels
        if self.heads < 1 or C % self.heads:
            raise ConfigError(f"LCT: {self.heads} heads do not divide {C} channels")
        if self.ca_reduction < 1 or C % self.ca_reduction:
            raise ConfigError(f"LCT: reduction {self.ca_reduction} does not divide {C} channels")
        if C % self.se_reduction:
            raise ConfigError(f"LCT: SE reduction {self.se_reduction} does not divide {C} channels")
        if self.dw_kernel % 2 == 0:
            raise ConfigError(f"LCT: depthwise kernel must be odd, got {self.dw_kernel}")
        if self.llc_mode not in LLC_MODES:
            raise ConfigError(f"LCT: llc_mode must be one of {LLC_MODES}, got {self.llc_mode!r}")
        if self.num_blocks < 0:
            raise ConfigError("LCT: num_blocks must be nonnegative")


def downsampled_hw(height: int, width: int) -> tuple[int, int]:
    return math.ceil(height / 2), math.ceil(width / 2)


class LLC(Module):
    """``PW(DW(x) + x)``, BN+ReLU after each conv; ``conv3x3`` mode is a plain 3x3 conv."""

    def __init__(self, channels: int, kernel: int, mode: str, rng: np.random.Generator):
        super().__init__()
        self.mode = mode
        if mode == "conv3x3":
            self.conv = Conv2d(channels, channels, 3, rng, padding=1)
            self.bn = BatchNorm2d(channels)
        else:
            self.dw = Conv2d(channels, channels, kernel, rng, padding=kernel // 2, groups=channels)
            self.dw_bn = BatchNorm2d(channels)
            self.pw = Conv2d(channels, channels, 1, rng)
            self.pw_bn = BatchNorm2d(channels)

    def forward(self, x: Tensor) -> Tensor:
        if self.mode == "conv3x3":
            return F.relu(self.bn(self.conv(x)))
        local = F.relu(self.dw_bn(self.dw(x)))
        return F.relu(self.pw_bn(self.pw(local + x)))


class CoordinateAttention(Module):
    def __init__(self, channels: int, reduction: int, rng: np.random.Generator):
        super().__init__()
        if channels % reduction:
            raise ConfigError(f"coordinate attention: {reduction} does not divide {channels}")
        mid = channels // reduction
        self.reduce = Conv2d(channels, mid, 1, rng)
        self.bn = BatchNorm2d(mid)
        self.conv_t = Conv2d(mid, channels, 1, rng)
        self.conv_f = Conv2d(mid, channels, 1, rng)

    def gates(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Return ``(s_t, s_f)`` shaped ``(B, C, H, 1)`` and ``(B, C, 1, W)``."""
        B, C, H, W = x.shape
        pooled_t = F.mean(x, axis=3, keepdims=True)                        # (B, C, H, 1)
        pooled_f = F.transpose(F.mean(x, axis=2, keepdims=True), (0, 1, 3, 2))  # (B, C, W, 1)
        y = self.reduce(F.concat([pooled_t, pooled_f], axis=2))
        y = F.hardswish(self.bn(y))
        y_t, y_f = y[:, :, :H], y[:, :, H:]
        s_t = F.sigmoid(self.conv_t(y_t))
        s_f = F.sigmoid(F.transpose(self.conv_f(y_f), (0, 1, 3, 2)))
        return s_t, s_f

    def forward(self, x: Tensor) -> Tensor:
        s_t, s_f = self.gates(x)
        return x * s_t * s_f


def attention(q: Tensor, k: Tensor, v: Tensor, bias: Tensor | None, heads: int, return_weights=False):
    """Multi-head ``softmax(Q K^T / sqrt(d) + B) V`` on token-major inputs.

    ``q`` is ``(B, N, C)``, ``k``/``v`` are ``(B, N', C)``, ``bias`` is
    ``(heads, N, N')``; ``d = C / heads``.
    """
    B, N, C = q.shape
    Nk = k.shape[1]
    if C % heads:
        raise ConfigError(f"attention: {heads} heads do not divide {C}")
    d = C // heads
    qh = F.transpose(F.reshape(q, (B, N, heads, d)), (0, 2, 1, 3))
    kh = F.transpose(F.reshape(k, (B, Nk, heads, d)), (0, 2, 3, 1))
    vh = F.transpose(F.reshape(v, (B, Nk, heads, d)), (0, 2, 1, 3))
    scores = F.matmul(qh, kh) * (1.0 / math.sqrt(d))
    if bias is not None:
        scores = scores + bias
    weights = F.softmax(scores, axis=-1)
    out = F.matmul(weights, vh)                                  # (B, heads, N, d)
    out = F.reshape(F.transpose(out, (0, 2, 1, 3)), (B, N, C))
    return (out, weights) if return_weights else out


class LMAM(Module):
    def __init__(self, cfg: LctConfig, height: int, width: int, rng: np.random.Generator):
        super().__init__()
        C = cfg.channels
        self.heads = cfg.heads
        self.hw = (height, width)
        self.ca = CoordinateAttention(C, cfg.ca_reduction, rng) if cfg.ca_enabled else None
        self.k_down = Conv2d(C, C, 2, rng, stride=2, groups=C)
        self.v_down = Conv2d(C, C, 2, rng, stride=2, groups=C)
        self.k_proj = Linear(C, C, rng)
        self.v_proj = Linear(C, C, rng)
        hk, wk = downsampled_hw(height, width)
        self.pos_bias = Parameter(np.zeros((cfg.heads, height * width, hk * wk)))

    def _tokens(self, down: Conv2d, proj: Linear, x: Tensor) -> Tensor:
        H, W = x.shape[2:]
        # bottom/right zero pad gives ceil(H/2) x ceil(W/2)
        y = F.conv2d(x, down.weight, down.bias, stride=2, padding=(0, H % 2, 0, W % 2), groups=down.groups)
        B, C = y.shape[:2]
        y = F.transpose(F.reshape(y, (B, C, -1)), (0, 2, 1))
        return proj(y)

    def keys_values(self, x: Tensor) -> tuple[Tensor, Tensor]:
        return self._tokens(self.k_down, self.k_proj, x), self._tokens(self.v_down, self.v_proj, x)

    def forward(self, x: Tensor, return_weights: bool = False):
        B, C, H, W = x.shape
        if (H, W) != self.hw:
            raise ConfigError(f"LMAM built for {self.hw}, got {(H, W)}")
        q = self.ca(x) if self.ca is not None else x
        q = F.transpose(F.reshape(q, (B, C, H * W)), (0, 2, 1))
        k, v = self.keys_values(x)
        out, weights = attention(q, k, v, self.pos_bias, self.heads, return_weights=True)
        out = F.reshape(F.transpose(out, (0, 2, 1)), (B, C, H, W)) + x
        return (out, weights) if return_weights else out


class SE(Module):
    def __init__(self, channels: int, reduction: int, rng: np.random.Generator):
        super().__init__()
        self.fc1 = Linear(channels, channels // reduction, rng)
        self.fc2 = Linear(channels // reduction, channels, rng)

    def gate(self, x: Tensor) -> Tensor:
        return F.sigmoid(self.fc2(F.relu(self.fc1(F.global_avg_pool(x)))))

    def forward(self, x: Tensor) -> Tensor:
        g = self.gate(x)
        return x * F.reshape(g, g.shape + (1, 1))


class SEIBFFN(Module):
    def __init__(self, cfg: LctConfig, rng: np.random.Generator):
        super().__init__()
        C, E, k = cfg.channels, cfg.channels * cfg.ffn_expansion, cfg.dw_kernel
        self.expand = Conv2d(C, E, 1, rng, bias=False)
        self.expand_bn = BatchNorm2d(E)
        self.dw = Conv2d(E, E, k, rng, padding=k // 2, groups=E, bias=False)
        self.dw_bn = BatchNorm2d(E)
        self.project = Conv2d(E, C, 1, rng, bias=False)
        self.project_bn = BatchNorm2d(C)
        self.se = SE(C, cfg.se_reduction, rng) if cfg.se_enabled else None

    def branch(self, x: Tensor) -> Tensor:
        h = F.hardswish(self.expand_bn(self.expand(x)))
        h = F.hardswish(self.dw_bn(self.dw(h)))
        h = self.project_bn(self.project(h))
        return self.se(h) if self.se is not None else h

    def forward(self, x: Tensor) -> Tensor:
        return self.branch(x) + x


class LCTBlock(Module):
    def __init__(self, cfg: LctConfig, height: int, width: int, rng: np.random.Generator):
        super().__init__()
        self.llc = LLC(cfg.channels, cfg.dw_kernel, cfg.llc_mode, rng)
        self.lmam = LMAM(cfg, height, width, rng)
        self.ffn = SEIBFFN(cfg, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.ffn(self.lmam(self.llc(x)))


class LCT(Module):
    """Stack of ``num_blocks`` LCT blocks; identity when disabled or empty."""

    def __init__(self, cfg: LctConfig, height: int, width: int, rng: np.random.Generator):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.blocks: list[LCTBlock] = []
        if cfg.enabled:
            for i in range(cfg.num_blocks):
                block = LCTBlock(cfg, height, width, rng)
                setattr(self, f"block{i}", block)
                self.blocks.append(block)

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x

"""Parameter registry and the basic layers built on :mod:`serlct.functional`."""
from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import DEFAULT_DTYPE, ConfigError, Tensor


class Parameter(Tensor):
    """A trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(np.array(data, dtype=dtype or DEFAULT_DTYPE), requires_grad=True)


class Module:
    """Container with ordered, hierarchically named parameters and buffers."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError

    # -- traversal --------------------------------------------------------------
    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, mod in self._modules.items():
            yield from mod.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self) -> Iterator[tuple[str, Parameter]]:
        seen: dict[int, str] = {}
        for path, mod in self.named_modules():
            for name, p in mod._params.items():
                full = f"{path}.{name}" if path else name
                if id(p) in seen:
                    raise ConfigError(f"parameter registered twice: {seen[id(p)]} and {full}")
                seen[id(p)] = full
                yield full, p

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for path, mod in self.named_modules():
            for name in mod._buffers:
                yield (f"{path}.{name}" if path else name), getattr(mod, name)

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    # -- state --------------------------------------------------------------
    def train(self, mode: bool = True) -> "Module":
        for _, mod in self.named_modules():
            object.__setattr__(mod, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def astype(self, dtype) -> "Module":
        for _, mod in self.named_modules():
            for name, p in mod._params.items():
                p.data = p.data.astype(dtype)
                p.grad = np.zeros_like(p.data)
            for name in list(mod._buffers):
                mod.register_buffer(name, getattr(mod, name).astype(dtype))
        return self

    def state_arrays(self) -> "OrderedDict[str, np.ndarray]":
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        for name, p in self.named_parameters():
            out[name] = p.data
        for name, b in self.named_buffers():
            out[name] = b
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        for name, p in params.items():
            if name not in arrays:
                raise KeyError(f"missing parameter {name!r}")
            if arrays[name].shape != p.shape:
                raise ValueError(f"{name}: shape {arrays[name].shape} != {p.shape}")
            p.data = np.array(arrays[name], dtype=arrays[name].dtype)
            p.grad = np.zeros_like(p.data)
        for path, mod in self.named_modules():
            for bname in list(mod._buffers):
                full = f"{path}.{bname}" if path else bname
                if full not in arrays:
                    raise KeyError(f"missing buffer {full!r}")
                mod.register_buffer(bname, np.array(arrays[full]))


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, rng, stride=1, padding=0, groups=1, bias=True):
        super().__init__()
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        if in_ch % groups or out_ch % groups:
            raise ConfigError(f"groups={groups} must divide {in_ch} and {out_ch}")
        fan_in = (in_ch // groups) * kh * kw
        self.weight = Parameter(kaiming_uniform(rng, (out_ch, in_ch // groups, kh, kw), fan_in))
        self.bias = Parameter(np.zeros(out_ch)) if bias else None
        self.stride, self.padding, self.groups = stride, padding, groups

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        bound = 1.0 / math.sqrt(d_in)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(d_out, d_in)))
        self.bias = Parameter(rng.uniform(-bound, bound, size=d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))
        self.momentum, self.eps = momentum, eps

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(
            x, self.weight, self.bias, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )


class Identity(Module):
    def forward(self, x: Tensor) -> Tensor:
        return x


class LSTM(Module):
    """One direction of an LSTM; gate blocks ordered input/forget/candidate/output."""

    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator, reverse: bool = False):
        super().__init__()
        bound = 1.0 / math.sqrt(hidden)
        self.w_ih = Parameter(rng.uniform(-bound, bound, size=(4 * hidden, d_in)))
        self.w_hh = Parameter(rng.uniform(-bound, bound, size=(4 * hidden, hidden)))
        b = np.zeros(4 * hidden)
        b[hidden : 2 * hidden] = 1.0
        self.bias = Parameter(b)
        self.hidden, self.reverse = hidden, reverse

    def forward(self, x: Tensor) -> Tensor:
        return F.lstm(x, self.w_ih, self.w_hh, self.bias, reverse=self.reverse)


class BiLSTM(Module):
    """Bidirectional LSTM: ``(B, T, D) -> (B, T, 2*hidden)``, forward half first."""

    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.fwd = LSTM(d_in, hidden, rng)
        self.bwd = LSTM(d_in, hidden, rng, reverse=True)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim == 2:
            out = self.forward(F.reshape(x, (1,) + x.shape))
            return F.reshape(out, out.shape[1:])
        return F.concat([self.fwd(x), self.bwd(x)], axis=-1)

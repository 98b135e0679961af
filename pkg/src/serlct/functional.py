"""Differentiable ops over :class:`~serlct.tensor.Tensor`.

Spatial ops take ``(B, C, H, W)`` batches; a bare ``(C, H, W)`` map is
treated as a batch of one and returned without the batch axis.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import expit

from .tensor import ConfigError, ShapeError, Tensor, as_tensor


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _like(value, ref: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=ref.dtype))


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = _like(b, a)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        b = as_tensor(b)
        a = _like(a, b)
    else:
        b = _like(b, a)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(
        a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))
    )


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = _like(b, a)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return Tensor._from_op(ad * bd, (a, b), backward)


def div(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        b = as_tensor(b)
        a = _like(a, b)
    else:
        b = _like(b, a)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * ad / (bd * bd), bd.shape)

    return Tensor._from_op(ad / bd, (a, b), backward)


def pow(x: Tensor, exponent: float) -> Tensor:
    xd = x.data
    return Tensor._from_op(
        xd**exponent, (x,), lambda g: (g * exponent * xd ** (exponent - 1),)
    )


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return Tensor._from_op(np.log(xd), (x,), lambda g: (g / xd,))


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    # np.maximum keeps NaN visible so the training loop can abort on it
    return Tensor._from_op(np.maximum(x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def hardswish(x: Tensor) -> Tensor:
    xd = x.data
    out = xd * np.clip(xd + 3.0, 0.0, 6.0) / 6.0

    def backward(g):
        d = np.where(xd < -3.0, 0.0, np.where(xd > 3.0, 1.0, (2.0 * xd + 3.0) / 6.0))
        return (g * d.astype(xd.dtype),)

    return Tensor._from_op(out, (x,), backward)


# -- reductions and shape ops ------------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._from_op(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([shape[a] for a in axes]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return Tensor._from_op(np.mean(x.data, axis=axis, keepdims=keepdims), (x,), backward)


def axis_mean(x: Tensor, axis) -> Tensor:
    return mean(x, axis=axis, keepdims=True)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return Tensor._from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return Tensor._from_op(
        np.ascontiguousarray(np.transpose(x.data, axes)), (x,), lambda g: (np.transpose(g, inv),)
    )


def getitem(x: Tensor, index) -> Tensor:
    shape, dtype = x.shape, x.dtype

    basic = all(isinstance(i, (slice, int, type(Ellipsis), type(None)))
                for i in (index if isinstance(index, tuple) else (index,)))

    def backward(g):
        out = np.zeros(shape, dtype=dtype)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return Tensor._from_op(np.array(x.data[index]), (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def pad2d(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    if top == bottom == left == right == 0:
        return x
    widths = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
    h, w = x.shape[-2:]

    def backward(g):
        return (g[..., top : top + h, left : left + w],)

    return Tensor._from_op(np.pad(x.data, widths), (x,), backward)


# -- linear algebra ------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs operands with at least 2 axes")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner axis mismatch: {a.shape[-1]} vs {b.shape[-2]}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return Tensor._from_op(ad @ bd, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: ``x @ weight.T + bias``."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(
            f"linear: last axis of input is {x.shape[-1]}, weight expects {weight.shape[1]}"
        )
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data
    d_out = wd.shape[0]

    def backward(g):
        g2 = g.reshape(-1, d_out)
        gx = g @ wd
        gw = g2.T @ xd.reshape(-1, xd.shape[-1])
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward)


# -- convolution and pooling -------------------------------------------------

def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(f"expected a (C,H,W) or (B,C,H,W) tensor, got shape {x.shape}")
    return x, False


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride=1,
    padding=0,
    groups: int = 1,
) -> Tensor:
    """Grouped 2-D cross-correlation.

    ``padding`` is an int, an ``(ph, pw)`` pair, or ``(top, bottom, left, right)``.
    Output accumulation runs over kernel row, kernel column, then input
    channel, starting from the bias, so results are independent of BLAS.
    """
    x, squeeze = _batched(x)
    sh, sw = _pair(stride)
    if isinstance(padding, (tuple, list)) and len(padding) == 4:
        pt, pb, pl, pr = (int(p) for p in padding)
    else:
        ph, pw = _pair(padding)
        pt, pb, pl, pr = ph, ph, pw, pw
    if min(sh, sw) < 1 or min(pt, pb, pl, pr) < 0:
        raise ConfigError("conv2d: stride must be positive and padding nonnegative")

    B, C, H, W = x.shape
    if weight.ndim != 4:
        raise ShapeError(f"conv2d: weight must have 4 axes, got shape {weight.shape}")
    Co, Cig, kH, kW = weight.shape
    if C % groups or Co % groups:
        raise ConfigError(f"conv2d: groups={groups} must divide in/out channels {C}/{Co}")
    if Cig * groups != C:
        raise ShapeError(
            f"conv2d: input channel axis is {C}, weight expects {Cig * groups} (groups={groups})"
        )
    Hp, Wp = H + pt + pb, W + pl + pr
    if kH > Hp:
        raise ShapeError(f"conv2d: kernel height {kH} exceeds padded height {Hp}")
    if kW > Wp:
        raise ShapeError(f"conv2d: kernel width {kW} exceeds padded width {Wp}")
    if bias is not None and bias.shape != (Co,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {Co} output channels")

    Ho = (Hp - kH) // sh + 1
    Wo = (Wp - kW) // sw + 1
    G, Cog = groups, Co // groups
    dtype = x.dtype

    xpad = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt or pb or pl or pr) else x.data
    xg = xpad.reshape(B, G, Cig, Hp, Wp)
    wg = weight.data.reshape(G, Cog, Cig, kH, kW)

    acc = np.zeros((B, G, Cog, Ho, Wo), dtype=dtype)
    if bias is not None:
        acc += bias.data.reshape(1, G, Cog, 1, 1)
    tmp = np.empty_like(acc)
    for i in range(kH):
        for j in range(kW):
            patch = xg[:, :, :, i : i + sh * (Ho - 1) + 1 : sh, j : j + sw * (Wo - 1) + 1 : sw]
            for c in range(Cig):
                np.multiply(wg[None, :, :, c, i, j, None, None], patch[:, :, None, c], out=tmp)
                acc += tmp
    out_data = acc.reshape(B, Co, Ho, Wo)

    def backward(g):
        gg = g.reshape(B, G, Cog, Ho, Wo)
        gxpad = np.zeros_like(xg)
        if Cig == 1 and Cog == 1:
            # depthwise: per-channel elementwise products
            gw = np.zeros_like(wg)
            g1 = gg[:, :, 0]
            w1 = wg[:, 0, 0]
            for i in range(kH):
                for j in range(kW):
                    hs = slice(i, i + sh * (Ho - 1) + 1, sh)
                    ws = slice(j, j + sw * (Wo - 1) + 1, sw)
                    gw[:, 0, 0, i, j] = (g1 * xg[:, :, 0, hs, ws]).sum(axis=(0, 2, 3))
                    gxpad[:, :, 0, hs, ws] += g1 * w1[None, :, i, j, None, None]
        else:
            win = np.lib.stride_tricks.sliding_window_view(xg, (kH, kW), axis=(3, 4))[:, :, :, ::sh, ::sw]
            cols = win.transpose(1, 0, 3, 4, 2, 5, 6).reshape(G, B * Ho * Wo, Cig * kH * kW)
            g2 = gg.transpose(1, 2, 0, 3, 4).reshape(G, Cog, B * Ho * Wo)
            gw = (g2 @ cols).reshape(wg.shape)
            gcols = (np.swapaxes(g2, 1, 2) @ wg.reshape(G, Cog, Cig * kH * kW)).reshape(
                G, B, Ho, Wo, Cig, kH, kW
            )
            for i in range(kH):
                for j in range(kW):
                    hs = slice(i, i + sh * (Ho - 1) + 1, sh)
                    ws = slice(j, j + sw * (Wo - 1) + 1, sw)
                    gxpad[:, :, :, hs, ws] += gcols[..., i, j].transpose(1, 0, 4, 2, 3)
        gx = gxpad.reshape(B, C, Hp, Wp)[:, :, pt : pt + H, pl : pl + W]
        grads = [gx, gw.reshape(weight.shape)]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    out = Tensor._from_op(out_data, parents, backward)
    return reshape(out, out.shape[1:]) if squeeze else out


def depthwise_conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    channels = x.shape[-3]
    if weight.ndim != 4 or weight.shape[0] != channels or weight.shape[1] != 1:
        raise ShapeError(
            f"depthwise_conv2d: weight shape {weight.shape} does not match {channels} input channels"
        )
    return conv2d(x, weight, bias, stride=stride, padding=padding, groups=channels)


def pointwise_conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if weight.ndim != 4 or weight.shape[2:] != (1, 1):
        raise ShapeError(f"pointwise_conv2d: weight must be (C_out, C_in, 1, 1), got {weight.shape}")
    return conv2d(x, weight, bias)


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping ``size x size`` max pooling; trailing rows/cols are dropped."""
    x, squeeze = _batched(x)
    B, C, H, W = x.shape
    Ho, Wo = H // size, W // size
    if Ho == 0 or Wo == 0:
        raise ShapeError(f"max_pool2d: input {H}x{W} smaller than pool size {size}")
    crop = x.data[:, :, : Ho * size, : Wo * size]
    win = crop.reshape(B, C, Ho, size, Wo, size).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, size * size)
    # first maximum wins ties
    arg = win.argmax(axis=-1)
    out_data = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        onehot = np.zeros_like(win)
        np.put_along_axis(onehot, arg[..., None], g[..., None], axis=-1)
        gwin = onehot.reshape(B, C, Ho, Wo, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho * size, Wo * size)
        gx = np.zeros((B, C, H, W), dtype=g.dtype)
        gx[:, :, : Ho * size, : Wo * size] = gwin
        return (gx,)

    out = Tensor._from_op(out_data, (x,), backward)
    return reshape(out, out.shape[1:]) if squeeze else out


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the two trailing spatial axes: ``(B, C, H, W) -> (B, C)``."""
    return mean(x, axis=(-2, -1))


# -- normalisation -------------------------------------------------------------

def batch_norm(
    x: Tensor,
    gamma: Tensor | None,
    beta: Tensor | None,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalisation over (batch, H, W).

    In training mode the running statistics are updated in place with the
    unbiased batch variance.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects (B,C,H,W), got {x.shape}")
    C = x.shape[1]
    if running_mean.shape != (C,):
        raise ShapeError(f"batch_norm: statistics for {running_mean.shape[0]} channels, input has {C}")
    xd = x.data
    axes = (0, 2, 3)
    n = xd.shape[0] * xd.shape[2] * xd.shape[3]
    if training:
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        unbiased = var * n / max(n - 1, 1)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mu, var = running_mean.astype(xd.dtype), running_var.astype(xd.dtype)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu[None, :, None, None]) * invstd[None, :, None, None]
    gd = gamma.data[None, :, None, None] if gamma is not None else None
    out = xhat * gd if gd is not None else xhat
    if beta is not None:
        out = out + beta.data[None, :, None, None]

    def backward(g):
        dxhat = g * gd if gd is not None else g
        if training:
            s1 = dxhat.sum(axis=axes, keepdims=True)
            s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
            gx = invstd[None, :, None, None] / n * (n * dxhat - s1 - xhat * s2)
        else:
            gx = dxhat * invstd[None, :, None, None]
        grads = [gx]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=axes))
        if beta is not None:
            grads.append(g.sum(axis=axes))
        return grads

    parents = [x] + [p for p in (gamma, beta) if p is not None]
    return Tensor._from_op(out.astype(xd.dtype, copy=False), parents, backward)


def group_norm(
    x: Tensor,
    groups: int,
    gamma: Tensor | None = None,
    beta: Tensor | None = None,
    eps: float = 1e-5,
) -> Tensor:
    """Normalise each sample over (channels in group, H, W)."""
    x4, squeeze = _batched(x)
    B, C, H, W = x4.shape
    if groups < 1 or C % groups:
        raise ConfigError(f"group_norm: {groups} groups do not divide {C} channels")
    xd = x4.data.reshape(B, groups, -1)
    n = xd.shape[-1]
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = ((xd - mu) * invstd).reshape(B, C, H, W)
    gd = gamma.data[None, :, None, None] if gamma is not None else None
    out = xhat * gd if gd is not None else xhat
    if beta is not None:
        out = out + beta.data[None, :, None, None]

    def backward(g):
        dxhat = (g * gd if gd is not None else g).reshape(B, groups, n)
        xh = xhat.reshape(B, groups, n)
        s1 = dxhat.sum(axis=-1, keepdims=True)
        s2 = (dxhat * xh).sum(axis=-1, keepdims=True)
        gx = (invstd / n * (n * dxhat - s1 - xh * s2)).reshape(B, C, H, W)
        grads = [gx]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=(0, 2, 3)))
        if beta is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = [x4] + [p for p in (gamma, beta) if p is not None]
    out_t = Tensor._from_op(out, parents, backward)
    return reshape(out_t, out_t.shape[1:]) if squeeze else out_t


# -- probability ---------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for {x.ndim}-d tensor")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (x,), backward)


def soft_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean over the batch of ``-sum_k y_k log softmax(logits)_k``."""
    t = Tensor(np.asarray(targets, dtype=logits.dtype))
    return mean(sum(mul(log_softmax(logits, axis=-1), t), axis=-1)) * -1.0


# -- permutation ---------------------------------------------------------------

def channel_shuffle(x: Tensor, groups: int) -> Tensor:
    """ShuffleNet channel shuffle: output channel ``i`` is input channel
    ``(i % groups) * (C // groups) + i // groups``."""
    x4, squeeze = _batched(x)
    B, C, H, W = x4.shape
    if groups < 1 or C % groups:
        raise ConfigError(f"channel_shuffle: {groups} groups do not divide {C} channels")
    y = reshape(x4, (B, groups, C // groups, H, W))
    y = transpose(y, (0, 2, 1, 3, 4))
    y = reshape(y, (B, C, H, W))
    return reshape(y, (C, H, W)) if squeeze else y


# -- recurrent -----------------------------------------------------------------

def lstm(
    x: Tensor,
    w_ih: Tensor,
    w_hh: Tensor,
    bias: Tensor,
    reverse: bool = False,
) -> Tensor:
    """Single-direction LSTM over ``x`` of shape ``(B, T, D)`` from zero state.

    Gate rows of the weights are ordered input, forget, candidate, output.
    Returns hidden states ``(B, T, hidden)`` aligned with the input steps.
    """
    if x.ndim != 3:
        raise ShapeError(f"lstm expects (B, T, D), got {x.shape}")
    B, T, D = x.shape
    if T == 0:
        raise ShapeError("lstm: empty sequence")
    hid = w_hh.shape[1]
    if w_ih.shape != (4 * hid, D):
        raise ShapeError(f"lstm: w_ih shape {w_ih.shape}, expected {(4 * hid, D)}")
    xd, wi, wh, bd = x.data, w_ih.data, w_hh.data, bias.data
    dtype = xd.dtype
    steps = list(range(T - 1, -1, -1)) if reverse else list(range(T))

    hs = np.zeros((B, T, hid), dtype=dtype)
    cs = np.zeros((B, T, hid), dtype=dtype)
    gates = np.zeros((B, T, 4 * hid), dtype=dtype)
    h = np.zeros((B, hid), dtype=dtype)
    c = np.zeros((B, hid), dtype=dtype)
    xproj = xd @ wi.T + bd
    for t in steps:
        a = xproj[:, t] + h @ wh.T
        i = expit(a[:, :hid])
        f = expit(a[:, hid : 2 * hid])
        gc = np.tanh(a[:, 2 * hid : 3 * hid])
        o = expit(a[:, 3 * hid :])
        c = f * c + i * gc
        h = o * np.tanh(c)
        gates[:, t] = np.concatenate([i, f, gc, o], axis=1)
        cs[:, t] = c
        hs[:, t] = h

    def backward(g):
        da_all = np.zeros_like(gates)
        dh_next = np.zeros((B, hid), dtype=dtype)
        dc_next = np.zeros((B, hid), dtype=dtype)
        for k in range(T - 1, -1, -1):
            t = steps[k]
            prev = steps[k - 1] if k > 0 else None
            c_prev = cs[:, prev] if prev is not None else np.zeros((B, hid), dtype=dtype)
            i, f, gc, o = np.split(gates[:, t], 4, axis=1)
            tc = np.tanh(cs[:, t])
            dh = g[:, t] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            di = dc * gc
            df = dc * c_prev
            dg = dc * i
            dc_next = dc * f
            da = np.concatenate(
                [di * i * (1 - i), df * f * (1 - f), dg * (1 - gc * gc), do * o * (1 - o)], axis=1
            )
            da_all[:, t] = da
            dh_next = da @ wh
        gx = da_all @ wi
        gwi = da_all.reshape(-1, 4 * hid).T @ xd.reshape(-1, D)
        gwh = np.zeros_like(wh)
        for k in range(1, T):
            gwh += da_all[:, steps[k]].T @ hs[:, steps[k - 1]]
        gb = da_all.reshape(-1, 4 * hid).sum(axis=0)
        return gx, gwi, gwh, gb

    return Tensor._from_op(hs, (x, w_ih, w_hh, bias), backward)

"""Differentiable operations over NCHW tensors.

Every op is pure. When a tape is active and any input requires a gradient the
op appends a backward closure to the tape. When a profile is active the op
reports its multiply-accumulate count.
"""
import builtins
import math
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit

from dic.engine.tensor import Tensor, active_tape, as_tensor
from dic.errors import ShapeError


@dataclass
class OpEvent:
    op: str
    macs: int
    shape: tuple[int, ...]


@dataclass
class OpProfile:
    events: list[OpEvent] = field(default_factory=list)

    @property
    def total_macs(self) -> int:
        return builtins.sum(e.macs for e in self.events)

    def by_op(self) -> dict[str, int]:
        totals: dict[str, int] = {}
        for e in self.events:
            totals[e.op] = totals.get(e.op, 0) + e.macs
        return totals


_ACTIVE_PROFILE: ContextVar[OpProfile | None] = ContextVar("dic_active_profile", default=None)


@contextmanager
def profile() -> Iterator[OpProfile]:
    """Count multiply-accumulates of every op executed inside the block."""
    prof = OpProfile()
    token = _ACTIVE_PROFILE.set(prof)
    try:
        yield prof
    finally:
        _ACTIVE_PROFILE.reset(token)


def count(op: str, macs: int, shape: tuple[int, ...]) -> None:
    prof = _ACTIVE_PROFILE.get()
    if prof is not None:
        prof.events.append(OpEvent(op, int(macs), tuple(shape)))


def _finish(op: str, inputs: tuple[Tensor, ...], data: np.ndarray, backward, macs: int = 0) -> Tensor:
    tape = active_tape()
    recording = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=recording)
    count(op, macs, out.shape)
    if recording:
        tape.record(op, inputs, out, backward)
    return out


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _finish("add", (a, b), a.data + b.data, backward)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _finish("sub", (a, b), a.data - b.data, backward)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _finish("mul", (a, b), a.data * b.data, backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    def backward(g):
        return (g.reshape(x.shape),)

    return _finish("reshape", (x,), x.data.reshape(shape), backward)


def sum(x: Tensor) -> Tensor:
    def backward(g):
        return (np.ones_like(x.data) * g,)

    return _finish("sum", (x,), np.asarray(x.data.sum()), backward)


def mean(x: Tensor) -> Tensor:
    n = x.data.size

    def backward(g):
        return (np.ones_like(x.data) * (g / n),)

    return _finish("mean", (x,), np.asarray(x.data.mean()), backward)


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error over all elements."""
    pred, target = _pair(pred, target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def backward(g):
        gp = diff * (2.0 * g / n)
        return gp, -gp

    return _finish("mse_loss", (pred, target), np.asarray((diff * diff).mean()), backward)


# ---------------------------------------------------------------- activations

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))

    def backward(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (g * (cdf + x.data * pdf),)

    return _finish("gelu", (x,), x.data * cdf, backward, macs=x.data.size)


def silu(x: Tensor) -> Tensor:
    sig = expit(x.data)

    def backward(g):
        return (g * sig * (1.0 + x.data * (1.0 - sig)),)

    return _finish("silu", (x,), x.data * sig, backward, macs=x.data.size)


ACTIVATIONS = {"gelu": gelu, "silu": silu}


# ---------------------------------------------------------------- convolution

def _check_conv_input(x: Tensor, weight: Tensor, kernel: int) -> None:
    if x.ndim != 4:
        raise ShapeError(f"expected NCHW input, got shape {x.shape}")
    if weight.ndim != 4 or weight.shape[2:] != (kernel, kernel):
        raise ShapeError(f"expected weight [Cout,Cin,{kernel},{kernel}], got {weight.shape}")
    if weight.shape[1] != x.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels but weight expects {weight.shape[1]}", field="Cin")


def _correlate3x3(padded: np.ndarray, weight: np.ndarray, stride: int) -> tuple[np.ndarray, np.ndarray]:
    windows = sliding_window_view(padded, (3, 3), axis=(2, 3))
    if stride == 2:
        windows = windows[:, :, ::2, ::2]
    # Fixed-shape product per sample keeps each output independent of batch size.
    out = np.stack([np.tensordot(sample, weight, axes=([0, 3, 4], [1, 2, 3])) for sample in windows])
    return out.transpose(0, 3, 1, 2), windows


def conv3x3_direct(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """3x3 cross-correlation, zero padding 1, stride 1 or 2."""
    _check_conv_input(x, weight, 3)
    if stride not in (1, 2):
        raise ShapeError(f"stride must be 1 or 2, got {stride}", field="stride")
    n, c, h, w = x.shape
    if stride == 2 and (h % 2 or w % 2):
        raise ShapeError(f"stride-2 conv needs even H and W, got {h}x{w}", field="stride")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} does not match Cout={weight.shape[0]}")

    padded = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out, windows = _correlate3x3(padded, weight.data, stride)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    cout, ho, wo = weight.shape[0], out.shape[2], out.shape[3]

    def backward(g):
        gw = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        if stride == 2:
            dilated = np.zeros((n, cout, h, w), dtype=g.dtype)
            dilated[:, :, ::2, ::2] = g
        else:
            dilated = g
        flipped = weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        gx, _ = _correlate3x3(np.pad(dilated, ((0, 0), (0, 0), (1, 1), (1, 1))), flipped, 1)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _finish("conv3x3", inputs, out, backward, macs=n * cout * ho * wo * c * 9)


def patchify_conv(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Non-overlapping 2x2 convolution with stride 2 (patch embedding)."""
    _check_conv_input(x, weight, 2)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"patchify needs even H and W, got {h}x{w}")
    ho, wo = h // 2, w // 2
    patches = x.data.reshape(n, c, ho, 2, wo, 2)
    out = np.stack([np.tensordot(p, weight.data, axes=([0, 2, 4], [1, 2, 3])) for p in patches]).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    cout = weight.shape[0]

    def backward(g):
        gw = np.tensordot(g, patches, axes=([0, 2, 3], [0, 2, 4]))
        gx = np.tensordot(g, weight.data, axes=([1], [0])).transpose(0, 3, 1, 4, 2, 5).reshape(n, c, h, w)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _finish("patchify_conv", inputs, out, backward, macs=n * cout * ho * wo * c * 4)


def depth_to_space(x: Tensor, factor: int = 2) -> Tensor:
    n, c, h, w = x.shape
    if c % (factor * factor):
        raise ShapeError(f"channels {c} not divisible by {factor * factor}")
    co = c // (factor * factor)
    out = x.data.reshape(n, co, factor, factor, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * factor, w * factor)

    def backward(g):
        return (g.reshape(n, co, h, factor, w, factor).transpose(0, 1, 3, 5, 2, 4).reshape(n, c, h, w),)

    return _finish("depth_to_space", (x,), out, backward)


# ---------------------------------------------------------------- normalization / dense

def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"expected NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    if groups < 1 or c % groups:
        raise ShapeError(f"channels {c} not divisible by groups {groups}", field="groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"affine parameters must have shape ({c},)")

    grouped = x.data.reshape(n, groups, -1)
    centered = grouped - grouped.mean(axis=2, keepdims=True)
    var = (centered * centered).mean(axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (centered * inv_std).reshape(n, c, h, w)
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def backward(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        dxhat = (g * gamma.data[None, :, None, None]).reshape(n, groups, -1)
        xh = xhat.reshape(n, groups, -1)
        gx = inv_std * (
            dxhat - dxhat.mean(axis=2, keepdims=True) - xh * (dxhat * xh).mean(axis=2, keepdims=True)
        )
        return gx.reshape(n, c, h, w), ggamma, gbeta

    return _finish("group_norm", (x, gamma, beta), out, backward, macs=x.data.size)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: x @ W^T + b."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear expects last extent {weight.shape[1]}, got input {x.shape}", field="Din")
    rows = x.data.size // x.shape[-1]
    dout, din = weight.shape
    flat = x.data.reshape(rows, din)
    out = np.stack([flat[i:i + 1] @ weight.data.T for i in range(rows)]).reshape(*x.shape[:-1], dout)
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(rows, dout)
        gx = (g2 @ weight.data).reshape(x.shape)
        gw = g2.T @ x.data.reshape(rows, din)
        gb = g2.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _finish("linear", inputs, out, backward, macs=rows * din * dout)


def embedding(table: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of `table`; gradients scatter-add back into the used rows."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"embedding index out of range [0, {table.shape[0]})", field="y")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _finish("embedding", (table,), table.data[idx], backward)


# ---------------------------------------------------------------- layout

def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 4 or b.ndim != 4:
        raise ShapeError("concat_channels expects NCHW tensors")
    if (a.shape[0], *a.shape[2:]) != (b.shape[0], *b.shape[2:]):
        raise ShapeError(f"cannot concat {a.shape} with {b.shape}: N,H,W differ")
    split = a.shape[1]

    def backward(g):
        return g[:, :split], g[:, split:]

    return _finish("concat", (a, b), np.concatenate([a.data, b.data], axis=1), backward)


def upsample_nearest2x(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _finish("upsample_nearest2x", (x,), out, backward)

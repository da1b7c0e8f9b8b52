"""Winograd F(2x2, 3x3) convolution for stride-1 3x3 kernels.

Each 2x2 output tile is computed from a 4x4 input tile with 16 elementwise
multiplications instead of the 36 a direct 3x3 convolution needs. The input
and output transforms are pure additions and run as strided slices over the
whole feature map; the channel contraction runs as 16 batched GEMMs.
"""
import logging
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from dic.engine import ops
from dic.engine.tensor import Tensor, is_recording
from dic.errors import ShapeError, UnsupportedOperationError

logger = logging.getLogger(__name__)

# Additions/multiplications of the slice transforms, per tile or per filter.
INPUT_TRANSFORM_OPS = 32
OUTPUT_TRANSFORM_OPS = 24
FILTER_TRANSFORM_OPS = 42


@dataclass(frozen=True)
class WinogradTransforms:
    G: np.ndarray = field(default_factory=lambda: np.array(
        [[1.0, 0.0, 0.0], [0.5, 0.5, 0.5], [0.5, -0.5, 0.5], [0.0, 0.0, 1.0]]
    ))
    Bt: np.ndarray = field(default_factory=lambda: np.array(
        [[1.0, 0.0, -1.0, 0.0], [0.0, 1.0, 1.0, 0.0], [0.0, -1.0, 1.0, 0.0], [0.0, 1.0, 0.0, -1.0]]
    ))
    At: np.ndarray = field(default_factory=lambda: np.array(
        [[1.0, 1.0, 1.0, 0.0], [0.0, 1.0, -1.0, -1.0]]
    ))

    def tile(self, g: np.ndarray, d: np.ndarray) -> np.ndarray:
        """2x2 valid correlation of one 4x4 tile `d` with one 3x3 filter `g`."""
        u = self.G @ g @ self.G.T
        v = self.Bt @ d @ self.Bt.T
        return self.At @ (u * v) @ self.At.T


TRANSFORMS = WinogradTransforms()


@dataclass(frozen=True)
class MultCount:
    direct_mults: int
    winograd_mults: int

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.winograd_mults, self.direct_mults)

    @property
    def saving(self) -> Fraction:
        return 1 - self.ratio


def winograd_mult_count(h: int, w: int, cin: int, cout: int) -> MultCount:
    """Multiplications of the elementwise-product stage against a direct conv.

    Odd extents count the padded tiles.
    """
    tiles = -(-h // 2) * -(-w // 2)
    return MultCount(direct_mults=h * w * cin * cout * 9, winograd_mults=tiles * cin * cout * 16)


def transform_filter(weight: np.ndarray) -> np.ndarray:
    """G g G^T for every (out, in) filter pair, laid out as [16, Cout, Cin]."""
    if weight.ndim != 4 or weight.shape[2:] != (3, 3):
        raise ShapeError(f"expected weight [Cout,Cin,3,3], got {weight.shape}")
    g = TRANSFORMS.G.astype(weight.dtype)
    u = g @ weight @ g.T
    cout, cin = weight.shape[:2]
    return np.ascontiguousarray(u.transpose(2, 3, 0, 1).reshape(16, cout, cin))


def _bt_rows(x: np.ndarray, axis: int, tiles: int) -> np.ndarray:
    """Apply B^T along `axis` for every tile; the new tile-position axis is inserted before it."""
    def take(k):
        index = [slice(None)] * x.ndim
        index[axis] = slice(k, k + 2 * tiles, 2)
        return x[tuple(index)]

    d0, d1, d2, d3 = take(0), take(1), take(2), take(3)
    return np.stack([d0 - d2, d1 + d2, d2 - d1, d1 - d3], axis=axis)


def _winograd_tiles(padded: np.ndarray, u: np.ndarray, th: int, tw: int) -> np.ndarray:
    n, c = padded.shape[:2]
    cout = u.shape[1]
    v = _bt_rows(padded, axis=2, tiles=th)          # N,C,4,th,Wp
    v = _bt_rows(v, axis=4, tiles=tw)               # N,C,4,th,4,tw
    v = v.transpose(2, 4, 1, 0, 3, 5).reshape(16, c, n * th * tw)
    m = np.matmul(u, v).reshape(4, 4, cout, n, th, tw)

    rows = np.stack([m[0] + m[1] + m[2], m[1] - m[2] - m[3]])                               # 2,4,Co,N,th,tw
    y = np.stack([rows[:, 0] + rows[:, 1] + rows[:, 2], rows[:, 1] - rows[:, 2] - rows[:, 3]], axis=1)
    return y.transpose(3, 2, 4, 0, 5, 1).reshape(n, cout, 2 * th, 2 * tw)


def winograd_conv3x3(
    x: Tensor, weight: Tensor, bias: Tensor | None = None, transformed: np.ndarray | None = None
) -> Tensor:
    """Stride-1, padding-1 3x3 convolution via F(2x2, 3x3); forward only.

    `transformed` may carry a cached `transform_filter(weight.data)`.
    """
    if is_recording(x, weight) or (bias is not None and is_recording(bias)):
        raise UnsupportedOperationError("winograd_conv3x3 has no backward; use conv3x3_direct while recording")
    if x.ndim != 4:
        raise ShapeError(f"expected NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    if weight.ndim != 4 or weight.shape[1:] != (c, 3, 3):
        raise ShapeError(f"weight {weight.shape} does not match input channels {c}", field="Cin")
    if h < 2 or w < 2:
        raise ShapeError(f"winograd needs H,W >= 2, got {h}x{w}")

    th, tw = -(-h // 2), -(-w // 2)
    padded = np.pad(x.data, ((0, 0), (0, 0), (1, 1 + 2 * th - h), (1, 1 + 2 * tw - w)))
    u = transformed if transformed is not None else transform_filter(weight.data)
    cout = weight.shape[0]
    # One fixed-shape product per sample: outputs do not depend on batch size.
    out = np.concatenate([_winograd_tiles(padded[i:i + 1], u, th, tw) for i in range(n)])[:, :, :h, :w]
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    ops.count("winograd_conv3x3", th * tw * n * c * cout * 16, (n, cout, h, w))
    return Tensor(out)

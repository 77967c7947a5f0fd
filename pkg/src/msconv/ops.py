"""Spatial operators with registered backward rules.

Grouped convolution, modulated deformable convolution, border-aware local
average pooling, global average pooling and pyramid resizing.  All
convolutions are cross-correlations with zero padding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from msconv import kernels
from msconv.tensor import Tensor, parameter, record

__all__ = [
    "ConvWeights", "conv2d", "modulated_deform_conv2d", "bilinear_sample",
    "local_avg_pool", "global_avg_pool", "resize",
]


@dataclass
class ConvWeights:
    kernel: Tensor
    bias: Tensor | None = None
    stride: int = 1
    padding: int | None = None
    groups: int = 1

    def __post_init__(self):
        c_out, c_in_g, kh, kw = self.kernel.shape
        if kh != kw:
            raise ValueError(f"square kernels only, got {kh}x{kw}")
        if self.padding is None:
            self.padding = (kh - 1) // 2
        if self.groups < 1 or c_out % self.groups:
            raise ValueError(f"groups={self.groups} does not divide C_out={c_out}")
        if self.bias is not None and self.bias.shape != (c_out,):
            raise ValueError(f"bias shape {self.bias.shape} != ({c_out},)")
        if self.stride < 1 or self.padding < 0:
            raise ValueError("stride must be >= 1 and padding >= 0")

    @property
    def k(self) -> int:
        return self.kernel.shape[2]

    @property
    def c_out(self) -> int:
        return self.kernel.shape[0]

    @property
    def c_in(self) -> int:
        return self.kernel.shape[1] * self.groups

    def tensors(self) -> dict[str, Tensor]:
        out = {"kernel": self.kernel}
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    @classmethod
    def init(cls, rng: np.random.Generator, c_in: int, c_out: int, k: int,
             groups: int = 1, bias: bool = True, zero: bool = False,
             bias_value: float = 0.0) -> "ConvWeights":
        """He-normal kernel (std = sqrt(2 / fan_in)) and constant bias."""
        if c_in % groups:
            raise ValueError(f"groups={groups} does not divide C_in={c_in}")
        shape = (c_out, c_in // groups, k, k)
        if zero:
            w = np.zeros(shape)
        else:
            w = rng.normal(0.0, math.sqrt(2.0 / (shape[1] * k * k)), size=shape)
        b = parameter(np.full(c_out, bias_value)) if bias else None
        return cls(parameter(w), b, groups=groups)


def _out_size(size, k, pad, stride):
    return (size + 2 * pad - k) // stride + 1


def _grouped_matmul(wmat, col, groups):
    """(C_out, Cg*k*k) x (N, C*k*k, P) -> (N, C_out, P), group by group."""
    c_out = wmat.shape[0]
    og = c_out // groups
    rg = col.shape[1] // groups
    outs = [np.matmul(wmat[g * og:(g + 1) * og], col[:, g * rg:(g + 1) * rg])
            for g in range(groups)]
    return outs[0] if groups == 1 else np.concatenate(outs, axis=1)


def _grouped_backward(wmat, col, gout, groups):
    c_out = wmat.shape[0]
    og = c_out // groups
    rg = col.shape[1] // groups
    gw = np.empty_like(wmat)
    gcol = np.empty_like(col)
    for g in range(groups):
        wg = wmat[g * og:(g + 1) * og]
        cg = col[:, g * rg:(g + 1) * rg]
        go = gout[:, g * og:(g + 1) * og]
        # fixed batch order for the weight reduction
        acc = go[0] @ cg[0].T
        for b in range(1, go.shape[0]):
            acc = acc + go[b] @ cg[b].T
        gw[g * og:(g + 1) * og] = acc
        gcol[:, g * rg:(g + 1) * rg] = np.matmul(wg.T, go)
    return gw, gcol


def conv2d(x: Tensor, w: ConvWeights) -> Tensor:
    n, c, h, wd = x.shape
    if c != w.c_in:
        raise ValueError(f"input has {c} channels, conv expects {w.c_in}")
    k, s, p = w.k, w.stride, w.padding
    ho, wo = _out_size(h, k, p, s), _out_size(wd, k, p, s)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv output would be empty for input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    hp, wp = xp.shape[2:]
    col = kernels.im2col(xp, k, s, ho, wo)
    wmat = w.kernel.data.reshape(w.c_out, -1)
    out = _grouped_matmul(wmat, col, w.groups)
    if w.bias is not None:
        out = out + w.bias.data[None, :, None]
    out = out.reshape(n, w.c_out, ho, wo)

    def bw(g):
        go = g.reshape(n, w.c_out, ho * wo)
        gw, gcol = _grouped_backward(wmat, col, go, w.groups)
        gxp = kernels.col2im(gcol, c, hp, wp, k, s, ho, wo)
        gx = gxp[:, :, p:p + h, p:p + wd] if p else gxp
        gb = g.sum(axis=(0, 2, 3)) if w.bias is not None else None
        return gx, gw.reshape(w.kernel.shape), gb

    parents = (x, w.kernel) + ((w.bias,) if w.bias is not None else ())
    return record(out, parents, bw, "conv2d")


def modulated_deform_conv2d(x: Tensor, offsets: Tensor, mask: Tensor, w: ConvWeights,
                            deform_groups: int = 1) -> Tensor:
    """Stride-1 modulated deformable convolution with "same" output size.

    ``offsets`` holds ``(dy, dx)`` pairs in pixels, tap-major within each
    deformable group; ``mask`` scales every tap sample.  Samples falling
    outside the image read zeros.
    """
    n, c, h, wd = x.shape
    k = w.k
    kk = k * k
    if c != w.c_in:
        raise ValueError(f"input has {c} channels, conv expects {w.c_in}")
    if w.stride != 1 or w.padding != (k - 1) // 2:
        raise ValueError("deformable conv supports stride 1 with same padding only")
    if deform_groups < 1 or c % deform_groups:
        raise ValueError(f"deform_groups={deform_groups} does not divide {c} channels")
    if offsets.shape != (n, 2 * deform_groups * kk, h, wd):
        raise ValueError(f"offsets shape {offsets.shape} != {(n, 2 * deform_groups * kk, h, wd)}")
    if mask.shape != (n, deform_groups * kk, h, wd):
        raise ValueError(f"mask shape {mask.shape} != {(n, deform_groups * kk, h, wd)}")
    pad = w.padding
    col = kernels.deform_im2col(x.data, offsets.data, mask.data, k, pad, deform_groups)
    wmat = w.kernel.data.reshape(w.c_out, -1)
    out = _grouped_matmul(wmat, col, w.groups)
    if w.bias is not None:
        out = out + w.bias.data[None, :, None]
    out = out.reshape(n, w.c_out, h, wd)

    def bw(g):
        go = g.reshape(n, w.c_out, h * wd)
        gw, gcol = _grouped_backward(wmat, col, go, w.groups)
        gx, goff, gmask = kernels.deform_col2im(gcol, x.data, offsets.data, mask.data,
                                                k, pad, deform_groups)
        gb = g.sum(axis=(0, 2, 3)) if w.bias is not None else None
        return gx, goff, gmask, gw.reshape(w.kernel.shape), gb

    parents = (x, offsets, mask, w.kernel) + ((w.bias,) if w.bias is not None else ())
    return record(out, parents, bw, "deform_conv2d")


def bilinear_sample(img: np.ndarray, y: float, x: float):
    """Zero-padded bilinear read of a 2-D array at real coordinates.

    Returns ``(value, weights, dvalue_dy, dvalue_dx)`` where ``weights`` maps
    each in-bounds neighbour ``(row, col)`` to its interpolation weight,
    which is also d(value)/d(pixel).
    """
    h, w = img.shape
    y0, x0 = math.floor(y), math.floor(x)
    ly, lx = y - y0, x - x0
    hy, hx = 1.0 - ly, 1.0 - lx
    value = dy = dx = 0.0
    weights = {}
    for r, cc, wt, gy, gx in ((y0, x0, hy * hx, -hx, -hy), (y0, x0 + 1, hy * lx, -lx, hy),
                              (y0 + 1, x0, ly * hx, hx, -ly), (y0 + 1, x0 + 1, ly * lx, lx, ly)):
        if 0 <= r < h and 0 <= cc < w:
            v = img[r, cc]
            value += wt * v
            dy += gy * v
            dx += gx * v
            weights[(r, cc)] = weights.get((r, cc), 0.0) + wt
    return value, weights, dy, dx


def _box_sum(a, k):
    """Zero-padded k x k window sum, same spatial size."""
    r = k // 2
    h, w = a.shape[2:]
    ap = np.pad(a, ((0, 0), (0, 0), (r, r), (r, r)))
    out = np.zeros_like(a)
    for i in range(k):
        for j in range(k):
            out += ap[:, :, i:i + h, j:j + w]
    return out


def _tap_counts(h, w, k):
    r = k // 2
    ys = np.arange(h)
    xs = np.arange(w)
    cy = np.minimum(ys + r, h - 1) - np.maximum(ys - r, 0) + 1
    cx = np.minimum(xs + r, w - 1) - np.maximum(xs - r, 0) + 1
    return (cy[:, None] * cx[None, :]).astype(np.float64)


def local_avg_pool(x: Tensor, k: int = 3) -> Tensor:
    """k x k mean over in-bounds taps only, so constants are preserved."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"pool size must be odd, got {k}")
    counts = _tap_counts(x.shape[2], x.shape[3], k)
    out = _box_sum(x.data, k) / counts
    return record(out, (x,), lambda g: (_box_sum(g / counts, k),), "local_avg_pool")


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    if h < 1 or w < 1:
        raise ValueError("global pooling of an empty map")
    area = h * w
    out = x.data.sum(axis=(2, 3), keepdims=True) / area
    return record(out, (x,), lambda g: (np.broadcast_to(g / area, x.shape).copy(),),
                  "global_avg_pool")


# ---------------------------------------------------------------------------
# resizing, one axis at a time (height first, then width)

def _up_plan(n_in, n_out, mode):
    dst = np.arange(n_out)
    src = (dst + 0.5) * (n_in / n_out) - 0.5
    if mode == "nearest":
        i0 = np.minimum(np.floor((dst + 0.5) * (n_in / n_out)).astype(np.int64), n_in - 1)
        return i0, i0, np.zeros(n_out)
    if mode != "bilinear":
        raise ValueError(f"unknown upsampling mode {mode!r}")
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def _resize_up_axis(a, axis, n_out, mode):
    n_in = a.shape[axis]
    i0, i1, f = _up_plan(n_in, n_out, mode)
    shape = [1] * a.ndim
    shape[axis] = n_out
    fr = f.reshape(shape)
    lo = np.take(a, i0, axis=axis)
    hi = np.take(a, i1, axis=axis)
    # lerp form keeps constant rows exactly constant
    out = lo + fr * (hi - lo)

    def bw(g):
        mat = np.zeros((n_out, n_in))
        np.add.at(mat, (np.arange(n_out), i0), 1.0 - f)
        np.add.at(mat, (np.arange(n_out), i1), f)
        return np.moveaxis(np.moveaxis(g, axis, -1) @ mat, -1, axis)

    return out, bw


def _bins(n_in, n_out):
    return [(i * n_in // n_out, -((-(i + 1) * n_in) // n_out)) for i in range(n_out)]


def _resize_down_axis(a, axis, n_out):
    n_in = a.shape[axis]
    am = np.moveaxis(a, axis, -1)
    bins = _bins(n_in, n_out)
    outs, args = [], []
    for lo, hi in bins:
        seg = am[..., lo:hi]
        j = np.argmax(seg, axis=-1)
        args.append(j + lo)
        outs.append(np.take_along_axis(seg, j[..., None], axis=-1)[..., 0])
    out = np.moveaxis(np.stack(outs, axis=-1), -1, axis)
    idx = np.stack(args, axis=-1)

    def bw(g):
        gm = np.moveaxis(g, axis, -1)
        gin = np.zeros(am.shape)
        for i in range(n_out):
            sel = idx[..., i:i + 1]
            cur = np.take_along_axis(gin, sel, axis=-1)
            np.put_along_axis(gin, sel, cur + gm[..., i:i + 1], axis=-1)
        return np.moveaxis(gin, -1, axis)

    return out, bw


def resize(x: Tensor, target: tuple[int, int], up: str = "bilinear") -> Tensor:
    """Resize a feature map to ``target`` spatial size.

    Growing axes use half-pixel-centre interpolation (``up`` = ``bilinear``
    or ``nearest``) with edge clamping; shrinking axes use adaptive max
    pooling over bins ``[floor(i*n/m), ceil((i+1)*n/m))``.  Height is
    processed before width.  A same-size resize returns ``x`` itself.
    """
    th, tw = int(target[0]), int(target[1])
    if th < 1 or tw < 1:
        raise ValueError(f"resize target must be positive, got {target}")
    if x.shape[2:] == (th, tw):
        return x
    steps = []
    a = x.data
    for axis, n_out in ((2, th), (3, tw)):
        n_in = a.shape[axis]
        if n_out == n_in:
            continue
        if n_out > n_in:
            a, bw = _resize_up_axis(a, axis, n_out, up)
        else:
            a, bw = _resize_down_axis(a, axis, n_out)
        steps.append(bw)

    def backward(g):
        for bw in reversed(steps):
            g = bw(g)
        return (g,)

    return record(a, (x,), backward, "resize")

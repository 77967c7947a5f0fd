"""The multi-scale convolution block.

Pipeline per call: per-level 1x1 reduction, gather to one level, scatter back
to every level, then at each level a shared block of scale alignment
(modulated deformable conv whose offsets/masks come from the level's own
input), 1x1 channel merge, context attention, residual add and a 3x3 output
conv.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from msconv.ops import (ConvWeights, conv2d, global_avg_pool, local_avg_pool,
                        modulated_deform_conv2d)
from msconv.pyramid import check_pyramid, gather, reduce_channels, scatter
from msconv.tensor import Tensor, add, mul, sigmoid, slice_channels


@dataclass
class MSConvConfig:
    L: int
    C: int
    C_r: int = 64
    l_gl: int = 1
    k: int = 1
    resize_up: str = "bilinear"
    use_sa: bool = True
    use_ca: bool = True

    def __post_init__(self):
        if self.L < 1 or self.C < 1:
            raise ValueError("L and C must be positive")
        if not 1 <= self.C_r <= self.C:
            raise ValueError(f"C_r={self.C_r} must lie in [1, C={self.C}]")
        if not 1 <= self.l_gl <= self.L:
            raise ValueError(f"l_gl={self.l_gl} must lie in [1, L={self.L}]")
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {self.k}")
        if self.resize_up not in ("bilinear", "nearest"):
            raise ValueError(f"unknown resize mode {self.resize_up!r}")


@dataclass
class MSConvParams:
    reduce: list[ConvWeights]
    merge: ConvWeights
    out: ConvWeights
    offset_gen: ConvWeights | None = None
    deform: ConvWeights | None = None
    ca_local: ConvWeights | None = None
    ca_global: ConvWeights | None = None
    ca_out: ConvWeights | None = None
    k: int = 1


def init_msconv_params(cfg: MSConvConfig, rng: np.random.Generator) -> MSConvParams:
    """Seeded He-normal init; the offset/mask generator starts at zero."""
    L, C, C_r, k = cfg.L, cfg.C, cfg.C_r, cfg.k
    reduce = [ConvWeights.init(rng, C, C_r, 1) for _ in range(L)]
    offset_gen = deform = None
    if cfg.use_sa:
        offset_gen = ConvWeights.init(rng, C, 3 * L * k * k, k, zero=True)
        deform = ConvWeights.init(rng, L * C_r, L * C_r, k, groups=L)
    merge = ConvWeights.init(rng, L * C_r, C, 1)
    ca = [None, None, None]
    if cfg.use_ca:
        ca = [ConvWeights.init(rng, C, C, 1) for _ in range(3)]
    out = ConvWeights.init(rng, C, C, 3)
    return MSConvParams(reduce, merge, out, offset_gen, deform, *ca, k=k)


def scale_align(Q_l: Tensor, X_l: Tensor, p: MSConvParams, L: int) -> Tensor:
    kk = p.k * p.k
    if Q_l.shape[2:] != X_l.shape[2:]:
        raise ValueError(f"gathered features {Q_l.shape} and level input {X_l.shape} differ spatially")
    if p.offset_gen.c_out != 3 * L * kk:
        raise ValueError(f"offset generator emits {p.offset_gen.c_out} channels, need {3 * L * kk}")
    raw = conv2d(X_l, p.offset_gen)
    offsets = slice_channels(raw, 0, 2 * L * kk)
    mask = sigmoid(slice_channels(raw, 2 * L * kk, 3 * L * kk))
    return modulated_deform_conv2d(Q_l, offsets, mask, p.deform, deform_groups=L)


def merge_channels(A_l: Tensor, p: MSConvParams) -> Tensor:
    return conv2d(A_l, p.merge)


def context_attention(M_l: Tensor, p: MSConvParams) -> tuple[Tensor, Tensor]:
    """Returns the rescaled features and the (0, 1) gate."""
    local = conv2d(local_avg_pool(M_l, 3), p.ca_local)
    glob = conv2d(global_avg_pool(M_l), p.ca_global)
    S = sigmoid(conv2d(add(local, glob), p.ca_out))
    return mul(M_l, S), S


def msconv_forward(X: list[Tensor], p: MSConvParams, cfg: MSConvConfig,
                   attention: list | None = None) -> list[Tensor]:
    """Apply one MSConv block to a pyramid; output shapes equal input shapes.

    If ``attention`` is a list, the per-level gates are appended to it.
    """
    check_pyramid(X, cfg.C)
    if len(X) != cfg.L:
        raise ValueError(f"pyramid has {len(X)} levels, config says {cfg.L}")
    shapes = [x.shape[2:] for x in X]
    D = reduce_channels(X, p.reduce)
    phi = gather(D, cfg.l_gl, cfg.resize_up)
    Q = scatter(phi, shapes, cfg.resize_up)
    Y = []
    for Q_l, X_l in zip(Q, X):
        A = scale_align(Q_l, X_l, p, cfg.L) if cfg.use_sa else Q_l
        M = merge_channels(A, p)
        if cfg.use_ca:
            O, S = context_attention(M, p)
            if attention is not None:
                attention.append(S)
        else:
            O = M
        Y.append(conv2d(add(O, X_l), p.out))
    return Y

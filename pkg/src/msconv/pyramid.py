"""Gather/scatter connection of a feature pyramid and its connection-cost model."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from msconv.ops import ConvWeights, conv2d, resize
from msconv.tensor import Tensor, concat_channels

FeaturePyramid = list  # list[Tensor], level 1 first (largest)


@dataclass(frozen=True)
class GatherConfig:
    C_r: int = 64
    l_gl: int = 1


def default_shapes(h1: int, w1: int, levels: int) -> list[tuple[int, int]]:
    """Level l gets ceil(size / 2**(l-1))."""
    return [(math.ceil(h1 / 2 ** l), math.ceil(w1 / 2 ** l)) for l in range(levels)]


def check_pyramid(X: Sequence[Tensor], channels: int | None = None) -> None:
    if not X:
        raise ValueError("empty pyramid")
    n, c = X[0].shape[:2]
    prev = None
    for i, x in enumerate(X, 1):
        if len(x.shape) != 4:
            raise ValueError(f"level {i} is not 4-D: {x.shape}")
        if x.shape[:2] != (n, c):
            raise ValueError(f"level {i} has batch/channels {x.shape[:2]}, level 1 has {(n, c)}")
        if prev is not None and (x.shape[2] > prev[0] or x.shape[3] > prev[1]):
            raise ValueError(f"level {i} resolution {x.shape[2:]} grows past level {i - 1} {prev}")
        prev = x.shape[2:]
    if channels is not None and c != channels:
        raise ValueError(f"pyramid has {c} channels, expected {channels}")


def reduce_channels(X: Sequence[Tensor], convs: Sequence[ConvWeights]) -> list[Tensor]:
    """One independent 1x1 conv per level, C -> C_r."""
    if len(convs) != len(X):
        raise ValueError(f"{len(convs)} reduction convs for {len(X)} levels")
    return [conv2d(x, w) for x, w in zip(X, convs)]


def gather(D: Sequence[Tensor], l_gl: int = 1, up: str = "bilinear") -> Tensor:
    """Resize every reduced level to level ``l_gl`` and stack along channels."""
    if not D:
        raise ValueError("empty pyramid")
    if not 1 <= l_gl <= len(D):
        raise ValueError(f"gathering level {l_gl} outside 1..{len(D)}")
    target = D[l_gl - 1].shape[2:]
    E = [resize(d, target, up) for d in D]
    return E[0] if len(E) == 1 else concat_channels(E)


def scatter(phi: Tensor, shapes: Sequence[tuple[int, int]], up: str = "bilinear") -> list[Tensor]:
    return [resize(phi, s, up) for s in shapes]


# ---------------------------------------------------------------------------
# connection cost

@dataclass(frozen=True)
class ConnectionCost:
    """Resize work of one way of connecting L pyramid levels.

    ``resizes`` counts resize operations weighted by their channel
    granularity (C for full connection, C_r for gather/scatter);
    ``channel_resizes`` counts every channel actually resampled, and
    ``element_traffic`` the output elements written when level shapes are
    known.
    """
    mode: str
    resizes: int
    channel_resizes: int
    element_traffic: int | None
    formula: str


def connection_cost(C: int, C_r: int, L: int, shapes: Sequence[tuple[int, int]] | None = None,
                    mode: str = "gather_scatter", l_gl: int = 1) -> ConnectionCost:
    if L < 1 or C < 1 or not 1 <= C_r <= C:
        raise ValueError("need L >= 1 and 1 <= C_r <= C")
    if shapes is not None and len(shapes) != L:
        raise ValueError(f"{len(shapes)} shapes for {L} levels")
    area = [h * w for h, w in shapes] if shapes is not None else None
    if mode == "full":
        resizes = C * L * (L - 1)
        channel_resizes = resizes
        traffic = None if area is None else sum(
            C * area[dst] for dst in range(L) for src in range(L) if src != dst)
        formula = "C*L*(L-1)"
    elif mode == "gather_scatter":
        resizes = 2 * C_r * (L - 1)
        channel_resizes = C_r * (L - 1) + L * C_r * (L - 1)
        traffic = None
        if area is not None:
            g = l_gl - 1
            traffic = sum(C_r * area[g] for l in range(L) if l != g) + sum(
                L * C_r * area[l] for l in range(L) if l != g)
        formula = "2*C_r*(L-1)"
    else:
        raise ValueError(f"unknown connection mode {mode!r}")
    return ConnectionCost(mode, resizes, channel_resizes, traffic, formula)


def leading_order_ratio(C: int, C_r: int, L: int) -> Fraction:
    """(C*L^2) / (C_r*L): full vs gather/scatter at leading order."""
    return Fraction(C * L * L, C_r * L)

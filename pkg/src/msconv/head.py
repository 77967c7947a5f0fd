"""RetinaNet-style detection heads: stacked-conv baseline and the MSConv head."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from msconv.block import MSConvConfig, MSConvParams, init_msconv_params, msconv_forward
from msconv.ops import ConvWeights, conv2d
from msconv.pyramid import check_pyramid
from msconv.tensor import Tensor, relu

P3_TO_P7_AT_640 = [(80, 80), (40, 40), (20, 20), (10, 10), (5, 5)]


@dataclass
class HeadConfig:
    L: int = 5
    C: int = 256
    C_r: int = 64
    num_classes: int = 80
    anchors_per_loc: int = 9
    stack_depth: int = 4
    msconv_depth: int = 4
    shapes: list = field(default_factory=lambda: list(P3_TO_P7_AT_640))
    batch: int = 1
    k: int = 1
    l_gl: int = 1
    resize_up: str = "bilinear"
    use_sa: bool = True
    use_ca: bool = True
    branch_relu: bool = True
    prior_prob: float = 0.01

    def __post_init__(self):
        self.shapes = [tuple(int(v) for v in s) for s in self.shapes]
        for name in ("L", "C", "C_r", "num_classes", "anchors_per_loc", "batch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.stack_depth < 0 or self.msconv_depth < 0:
            raise ValueError("stack depths must be non-negative")
        if len(self.shapes) != self.L:
            raise ValueError(f"{len(self.shapes)} level shapes for L={self.L}")
        for (h0, w0), (h1, w1) in zip(self.shapes, self.shapes[1:]):
            if h1 > h0 or w1 > w0:
                raise ValueError(f"level shapes must be non-increasing: {self.shapes}")
        if any(h < 1 or w < 1 for h, w in self.shapes):
            raise ValueError("level shapes must be positive")
        if not 0 < self.prior_prob < 1:
            raise ValueError("prior_prob must lie in (0, 1)")
        self.block_config()  # validates C_r, l_gl, k, resize mode

    def block_config(self) -> MSConvConfig:
        return MSConvConfig(L=self.L, C=self.C, C_r=self.C_r, l_gl=self.l_gl, k=self.k,
                            resize_up=self.resize_up, use_sa=self.use_sa, use_ca=self.use_ca)

    @property
    def cls_channels(self) -> int:
        return self.anchors_per_loc * self.num_classes

    @property
    def reg_channels(self) -> int:
        return self.anchors_per_loc * 4


@dataclass
class BaselineHeadParams:
    cls_convs: list[ConvWeights]
    reg_convs: list[ConvWeights]
    cls_pred: ConvWeights
    reg_pred: ConvWeights


@dataclass
class MSConvHeadParams:
    blocks: list[MSConvParams]
    cls_extra: ConvWeights
    reg_extra: ConvWeights
    cls_pred: ConvWeights
    reg_pred: ConvWeights


def _prior_bias(cfg: HeadConfig) -> float:
    return -math.log((1 - cfg.prior_prob) / cfg.prior_prob)


def _preds(cfg, rng):
    cls_pred = ConvWeights.init(rng, cfg.C, cfg.cls_channels, 3, bias_value=_prior_bias(cfg))
    reg_pred = ConvWeights.init(rng, cfg.C, cfg.reg_channels, 3)
    return cls_pred, reg_pred


def init_baseline_params(cfg: HeadConfig, rng: np.random.Generator) -> BaselineHeadParams:
    cls_convs = [ConvWeights.init(rng, cfg.C, cfg.C, 3) for _ in range(cfg.stack_depth)]
    reg_convs = [ConvWeights.init(rng, cfg.C, cfg.C, 3) for _ in range(cfg.stack_depth)]
    return BaselineHeadParams(cls_convs, reg_convs, *_preds(cfg, rng))


def init_msconv_head_params(cfg: HeadConfig, rng: np.random.Generator) -> MSConvHeadParams:
    bcfg = cfg.block_config()
    blocks = [init_msconv_params(bcfg, rng) for _ in range(cfg.msconv_depth)]
    cls_extra = ConvWeights.init(rng, cfg.C, cfg.C, 3)
    reg_extra = ConvWeights.init(rng, cfg.C, cfg.C, 3)
    return MSConvHeadParams(blocks, cls_extra, reg_extra, *_preds(cfg, rng))


def _branch(x: Tensor, convs, pred: ConvWeights, act: bool = True) -> Tensor:
    for w in convs:
        x = conv2d(x, w)
        if act:
            x = relu(x)
    return conv2d(x, pred)


def baseline_head_forward(X: list[Tensor], p: BaselineHeadParams, cfg: HeadConfig) -> dict:
    """Per level: cls/reg branches of stacked 3x3 conv + ReLU, then a 3x3 predictor.

    Branch weights are shared across levels.
    """
    check_pyramid(X, cfg.C)
    return {
        "cls": [_branch(x, p.cls_convs, p.cls_pred) for x in X],
        "reg": [_branch(x, p.reg_convs, p.reg_pred) for x in X],
    }


def msconv_head_forward(X: list[Tensor], p: MSConvHeadParams, cfg: HeadConfig) -> dict:
    """MSConv blocks shared by both branches, then per branch an extra 3x3 conv and the predictor."""
    check_pyramid(X, cfg.C)
    bcfg = cfg.block_config()
    feats = list(X)
    for block in p.blocks:
        feats = msconv_forward(feats, block, bcfg)
    return {
        "cls": [_branch(f, [p.cls_extra], p.cls_pred, cfg.branch_relu) for f in feats],
        "reg": [_branch(f, [p.reg_extra], p.reg_pred, cfg.branch_relu) for f in feats],
    }

"""Named finite-difference cases covering every differentiable operation.

Each registry entry builds one or more ``(label, fn, wrt)`` cases from a seed.
Inputs are drawn so that no case sits within the step size of a kink
(ReLU at zero, integer bilinear sampling coordinates, max-pool ties).
"""
from __future__ import annotations

import numpy as np

from msconv import tensor as T
from msconv.block import MSConvConfig, init_msconv_params, msconv_forward
from msconv.gradcheck import GradReport, gradcheck
from msconv.head import (HeadConfig, baseline_head_forward, init_baseline_params,
                         init_msconv_head_params, msconv_head_forward)
from msconv.ops import (ConvWeights, conv2d, global_avg_pool, local_avg_pool,
                        modulated_deform_conv2d, resize)
from msconv.params import assign, named_tensors, tag_names
from msconv.tensor import Tensor, parameter


def _p(rng, *shape, name=""):
    return parameter(rng.normal(size=shape), name=name)


def _away_from_zero(a, gap=1e-2):
    return np.where(np.abs(a) < gap, np.sign(a + 1e-300) * gap + a, a)


def _fractional(rng, shape, spread=2.0):
    """Offsets whose fractional part stays in [0.05, 0.95]."""
    whole = rng.integers(-int(spread), int(spread) + 1, size=shape)
    return whole + rng.uniform(0.05, 0.95, size=shape)


def _elementwise(rng):
    a, b = _p(rng, 1, 3, 4, 4, name="a"), _p(rng, 1, 3, 4, 4, name="b")
    c = _p(rng, 1, 3, 1, 1, name="c")
    return [
        ("add", lambda: T.add(a, b), [a, b]),
        ("mul", lambda: T.mul(a, b), [a, b]),
        ("add_broadcast", lambda: T.add(a, c), [a, c]),
        ("mul_broadcast", lambda: T.mul(a, c), [a, c]),
        ("scale", lambda: T.scale(a, -1.7), [a]),
    ]


def _activations(rng):
    x = _p(rng, 1, 4, 3, 3, name="x")
    r = parameter(_away_from_zero(rng.normal(size=(1, 4, 3, 3))), name="r")
    return [("sigmoid", lambda: T.sigmoid(x), [x]), ("relu", lambda: T.relu(r), [r])]


def _channels(rng):
    a, b = _p(rng, 1, 2, 3, 3, name="a"), _p(rng, 1, 3, 3, 3, name="b")
    return [
        ("concat", lambda: T.concat_channels([a, b]), [a, b]),
        ("slice", lambda: T.slice_channels(b, 1, 3), [b]),
        ("sum", lambda: T.sum_all(a), [a]),
    ]


def _conv_cases(rng):
    cases = []
    for groups in (1, 2, 4):
        for k in (1, 3):
            x = _p(rng, 2, 4, 5, 5, name="x")
            w = ConvWeights(_p(rng, 4, 4 // groups, k, k, name="kernel"), _p(rng, 4, name="bias"),
                            groups=groups)
            cases.append((f"conv2d_g{groups}_k{k}", lambda x=x, w=w: conv2d(x, w),
                          [x, w.kernel, w.bias]))
    x = _p(rng, 1, 3, 5, 5, name="x")
    w = ConvWeights(_p(rng, 2, 3, 3, 3, name="kernel"), _p(rng, 2, name="bias"), stride=2)
    cases.append(("conv2d_stride2", lambda: conv2d(x, w), [x, w.kernel, w.bias]))
    return cases


def _deform_cases(rng):
    cases = []
    for k, dg, groups in ((3, 2, 2), (1, 2, 2), (3, 1, 1)):
        n, c, h, w = 1, 4, 4, 5
        x = _p(rng, n, c, h, w, name="x")
        off = parameter(_fractional(rng, (n, 2 * dg * k * k, h, w)), name="offsets")
        mask = parameter(rng.uniform(0.1, 0.9, size=(n, dg * k * k, h, w)), name="mask")
        cw = ConvWeights(_p(rng, 4, c // groups, k, k, name="kernel"), _p(rng, 4, name="bias"),
                         groups=groups)
        cases.append((f"deform_conv_k{k}_dg{dg}",
                      lambda x=x, off=off, mask=mask, cw=cw, dg=dg:
                      modulated_deform_conv2d(x, off, mask, cw, dg),
                      [x, off, mask, cw.kernel, cw.bias]))
    return cases


def _pool_cases(rng):
    x = _p(rng, 2, 3, 4, 5, name="x")
    return [("local_avg_pool", lambda: local_avg_pool(x, 3), [x]),
            ("global_avg_pool", lambda: global_avg_pool(x), [x])]


def _resize_cases(rng):
    x = _p(rng, 1, 2, 4, 5, name="x")
    return [
        ("resize_up_bilinear", lambda: resize(x, (7, 9)), [x]),
        ("resize_up_nearest", lambda: resize(x, (7, 9), "nearest"), [x]),
        ("resize_down", lambda: resize(x, (3, 2)), [x]),
        ("resize_mixed", lambda: resize(x, (6, 3)), [x]),
    ]


def _randomize_offsets(p, rng, scale=0.3):
    # the default zero init would put every sample on an integer coordinate
    for block in p if isinstance(p, list) else [p]:
        if block.offset_gen is not None:
            assign(block, "offset_gen.kernel", rng.normal(0, scale, size=block.offset_gen.kernel.shape))
            assign(block, "offset_gen.bias", rng.normal(0, scale, size=block.offset_gen.bias.shape))
            tag_names(block)


def tiny_block_config(k: int = 1, l_gl: int = 1) -> MSConvConfig:
    return MSConvConfig(L=2, C=4, C_r=2, l_gl=l_gl, k=k)


def _msconv_cases(rng):
    cases = []
    for k, l_gl in ((1, 1), (3, 2)):
        cfg = tiny_block_config(k, l_gl)
        p = init_msconv_params(cfg, rng)
        tag_names(p)
        _randomize_offsets(p, rng)
        X = [_p(rng, 1, 4, 6, 6, name="x_1"), _p(rng, 1, 4, 3, 3, name="x_2")]
        wrt = list(named_tensors(p).values()) + X
        cases.append((f"msconv_k{k}_gl{l_gl}", lambda p=p, X=X, cfg=cfg: msconv_forward(X, p, cfg), wrt))
    return cases


def tiny_head_config(**kw) -> HeadConfig:
    base = dict(L=2, C=4, C_r=2, num_classes=2, anchors_per_loc=1, stack_depth=2,
                msconv_depth=2, shapes=[(6, 6), (3, 3)])
    base.update(kw)
    return HeadConfig(**base)


def _head_cases(rng):
    cfg = tiny_head_config()
    X = [_p(rng, 1, 4, 6, 6, name="x_1"), _p(rng, 1, 4, 3, 3, name="x_2")]
    bp = init_baseline_params(cfg, rng)
    mp = init_msconv_head_params(cfg, rng)
    tag_names(bp)
    tag_names(mp)
    _randomize_offsets(mp.blocks, rng)

    def flat(out):
        return out["cls"] + out["reg"]

    return [
        ("baseline_head", lambda: flat(baseline_head_forward(X, bp, cfg)),
         list(named_tensors(bp).values()) + X),
        ("msconv_head", lambda: flat(msconv_head_forward(X, mp, cfg)),
         list(named_tensors(mp).values()) + X),
    ]


REGISTRY = {
    "elementwise": _elementwise,
    "activation": _activations,
    "channels": _channels,
    "conv2d": _conv_cases,
    "deform_conv": _deform_cases,
    "pooling": _pool_cases,
    "resize": _resize_cases,
    "msconv": _msconv_cases,
    "head": _head_cases,
}


def cases(op: str, seed: int = 0):
    if op not in REGISTRY:
        raise KeyError(op)
    return REGISTRY[op](np.random.default_rng(seed))


def run(op: str, seed: int = 0) -> list[tuple[str, GradReport]]:
    return [(label, gradcheck(fn, wrt, seed=seed)) for label, fn, wrt in cases(op, seed)]

import math

import numpy as np
import pytest

from conftest import pyramid
from msconv import reference
from msconv.head import (HeadConfig, baseline_head_forward, init_baseline_params,
                         init_msconv_head_params, msconv_head_forward)
from msconv.params import assign, named_tensors
from msconv.runner import config_to_dict
from msconv.tensor import Tensor


def test_default_config():
    cfg = HeadConfig()
    assert (cfg.L, cfg.C, cfg.C_r, cfg.num_classes, cfg.anchors_per_loc) == (5, 256, 64, 80, 9)
    assert cfg.stack_depth == 4 and cfg.msconv_depth == 4
    assert cfg.cls_channels == 720 and cfg.reg_channels == 36
    assert cfg.shapes == [(80, 80), (40, 40), (20, 20), (10, 10), (5, 5)]


@pytest.mark.parametrize("bad", [
    dict(L=2), dict(C=0), dict(stack_depth=-1), dict(prior_prob=1.0),
    dict(shapes=[(4, 4), (8, 8)], L=2), dict(C_r=300), dict(k=2),
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        HeadConfig(**bad)


def test_baseline_output_shapes_at_default_width():
    cfg = HeadConfig(L=1, shapes=[(10, 10)], stack_depth=1)
    p = init_baseline_params(cfg, np.random.default_rng(0))
    out = baseline_head_forward([Tensor(np.zeros((1, 256, 10, 10)))], p, cfg)
    assert out["cls"][0].shape == (1, 720, 10, 10)
    assert out["reg"][0].shape == (1, 36, 10, 10)


def test_prior_bias(tiny_head):
    p = init_baseline_params(tiny_head, np.random.default_rng(0))
    assert np.all(p.cls_pred.bias.data == -math.log(99.0))
    assert np.all(p.reg_pred.bias.data == 0.0)


def test_both_heads_have_identical_shapes(rng, tiny_head):
    X = pyramid(rng, 1, tiny_head.C, tiny_head.shapes)
    b = baseline_head_forward(X, init_baseline_params(tiny_head, rng), tiny_head)
    m = msconv_head_forward(X, init_msconv_head_params(tiny_head, rng), tiny_head)
    for br in ("cls", "reg"):
        assert [t.shape for t in b[br]] == [t.shape for t in m[br]]


def test_stack_depth_zero_applies_predictor_directly(rng, tiny_head):
    cfg = HeadConfig(**{**vars(tiny_head), "stack_depth": 0})
    p = init_baseline_params(cfg, rng)
    assert p.cls_convs == [] and p.reg_convs == []
    X = pyramid(rng, 1, cfg.C, cfg.shapes)
    out = baseline_head_forward(X, p, cfg)
    want = reference.conv2d(X[0].data, p.cls_pred.kernel.data, p.cls_pred.bias.data)
    assert np.max(np.abs(out["cls"][0].data - want)) < 1e-12


def test_shared_branch_weights_across_levels(rng):
    cfg = HeadConfig(L=2, C=4, C_r=2, num_classes=3, anchors_per_loc=2, stack_depth=2,
                     shapes=[(5, 5), (5, 5)])
    x = Tensor(rng.normal(size=(1, 4, 5, 5)))
    out = baseline_head_forward([x, x], init_baseline_params(cfg, rng), cfg)
    for br in ("cls", "reg"):
        assert out[br][0].data.tobytes() == out[br][1].data.tobytes()


def test_identity_blocks_reduce_msconv_head_to_baseline(rng, tiny_head):
    cfg = HeadConfig(**{**vars(tiny_head), "stack_depth": 1, "msconv_depth": 1})
    mp = init_msconv_head_params(cfg, rng)
    bp = init_baseline_params(cfg, rng)
    C = cfg.C
    for name, t in named_tensors(mp.blocks).items():
        if not name.split(".", 1)[1].startswith("reduce."):
            assign(mp.blocks, name, np.zeros(t.shape))
    centre = np.zeros((C, C, 3, 3))
    centre[np.arange(C), np.arange(C), 1, 1] = 1.0
    assign(mp.blocks, "0.out.kernel", centre)
    for src, dst in (("cls_convs.0", "cls_extra"), ("reg_convs.0", "reg_extra"),
                     ("cls_pred", "cls_pred"), ("reg_pred", "reg_pred")):
        for leaf in ("kernel", "bias"):
            assign(mp, f"{dst}.{leaf}", named_tensors(bp)[f"{src}.{leaf}"])
    X = pyramid(rng, 1, C, cfg.shapes)
    b = baseline_head_forward(X, bp, cfg)
    m = msconv_head_forward(X, mp, cfg)
    for br in ("cls", "reg"):
        for tb, tm in zip(b[br], m[br]):
            assert tb.data.tobytes() == tm.data.tobytes()


@pytest.mark.parametrize("branch_relu", [True, False])
def test_heads_match_loop_reference(rng, tiny_head, branch_relu):
    cfg = HeadConfig(**{**vars(tiny_head), "branch_relu": branch_relu, "batch": 2})
    X = pyramid(rng, 2, cfg.C, cfg.shapes)
    xs = [x.data for x in X]
    raw = config_to_dict("msconv_head", cfg)
    for kind, init, fwd in (("baseline_head", init_baseline_params, baseline_head_forward),
                            ("msconv_head", init_msconv_head_params, msconv_head_forward)):
        p = init(cfg, rng)
        if kind == "msconv_head":
            for j, b in enumerate(p.blocks):
                assign(p, f"blocks.{j}.offset_gen.kernel", rng.normal(0, 0.3, size=b.offset_gen.kernel.shape))
        P = {n: t.data for n, t in named_tensors(p).items()}
        cls, reg = (reference.baseline_head if kind == "baseline_head" else reference.msconv_head)(xs, P, raw)
        out = fwd(X, p, cfg)
        for got, want in zip(out["cls"] + out["reg"], cls + reg):
            assert np.max(np.abs(got.data - want)) < 1e-12, kind


def test_param_names(tiny_head, rng):
    names = set(named_tensors(init_msconv_head_params(tiny_head, rng)))
    assert "blocks.1.ca_out.bias" in names and "cls_extra.kernel" in names
    assert "blocks.0.reduce.1.kernel" in names
    names = set(named_tensors(init_baseline_params(tiny_head, rng)))
    assert {"cls_convs.1.kernel", "reg_pred.bias"} <= names

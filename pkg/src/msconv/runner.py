"""Config-driven construction and execution of the three forwards.

A config is a JSON object with a ``kind`` (``msconv``, ``baseline_head`` or
``msconv_head``) plus any :class:`HeadConfig` field.  Inputs are named
``x_1 .. x_L``; outputs ``y_l`` for a bare block, ``cls_l`` / ``reg_l`` for
heads.  Parameter names are the dotted paths from :mod:`msconv.params`.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from msconv.block import init_msconv_params, msconv_forward
from msconv.head import (HeadConfig, baseline_head_forward, init_baseline_params,
                         init_msconv_head_params, msconv_head_forward)
from msconv.io import SchemaError
from msconv.params import load, named_tensors, tag_names
from msconv.tensor import Tensor, no_grad

KINDS = ("msconv", "baseline_head", "msconv_head")
_FIELDS = {f.name for f in dataclasses.fields(HeadConfig)}


def parse_config(raw: dict) -> tuple[str, HeadConfig]:
    if not isinstance(raw, dict):
        raise SchemaError("config must be a JSON object")
    kind = raw.get("kind", "msconv")
    if kind not in KINDS:
        raise SchemaError(f"unknown kind {kind!r}; expected one of {KINDS}")
    unknown = set(raw) - _FIELDS - {"kind"}
    if unknown:
        raise SchemaError(f"unknown config fields {sorted(unknown)}")
    fields = {k: v for k, v in raw.items() if k != "kind"}
    if "shapes" in fields and "L" not in fields:
        fields["L"] = len(fields["shapes"])
    try:
        return kind, HeadConfig(**fields)
    except (TypeError, ValueError) as e:
        raise SchemaError(str(e)) from None


def config_to_dict(kind: str, cfg: HeadConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["shapes"] = [list(s) for s in cfg.shapes]
    d["kind"] = kind
    return d


def init_params(kind: str, cfg: HeadConfig, seed: int):
    rng = np.random.default_rng(seed)
    if kind == "msconv":
        p = init_msconv_params(cfg.block_config(), rng)
    elif kind == "baseline_head":
        p = init_baseline_params(cfg, rng)
    elif kind == "msconv_head":
        p = init_msconv_head_params(cfg, rng)
    else:
        raise SchemaError(f"unknown kind {kind!r}")
    tag_names(p)
    return p


def params_from_tensors(kind: str, cfg: HeadConfig, tensors: dict):
    p = init_params(kind, cfg, 0)
    try:
        load(p, tensors)
    except (KeyError, ValueError) as e:
        raise SchemaError(str(e)) from None
    return p


def seeded_inputs(cfg: HeadConfig, seed: int) -> list[Tensor]:
    rng = np.random.default_rng(seed)
    return [Tensor(rng.normal(size=(cfg.batch, cfg.C, h, w))) for h, w in cfg.shapes]


def input_names(cfg: HeadConfig) -> list[str]:
    return [f"x_{l}" for l in range(1, cfg.L + 1)]


def order_inputs(cfg: HeadConfig, named: dict) -> list[Tensor]:
    names = input_names(cfg)
    missing = [n for n in names if n not in named]
    if missing:
        raise SchemaError(f"missing inputs {missing}")
    xs = [named[n] for n in names]
    for n, x, (h, w) in zip(names, xs, cfg.shapes):
        want = (cfg.batch, cfg.C, h, w)
        if x.shape != want:
            raise SchemaError(f"input {n} has shape {x.shape}, config implies {want}")
    return xs


def forward(kind: str, cfg: HeadConfig, params, xs: list[Tensor]) -> dict[str, Tensor]:
    if kind == "msconv":
        ys = msconv_forward(xs, params, cfg.block_config())
        return {f"y_{l}": y for l, y in enumerate(ys, 1)}
    fwd = baseline_head_forward if kind == "baseline_head" else msconv_head_forward
    out = fwd(xs, params, cfg)
    named = {}
    for l in range(cfg.L):
        named[f"cls_{l + 1}"] = out["cls"][l]
        named[f"reg_{l + 1}"] = out["reg"][l]
    return named


def run(kind: str, cfg: HeadConfig, params, xs: list[Tensor]) -> dict[str, Tensor]:
    with no_grad():
        return forward(kind, cfg, params, xs)


def param_arrays(params) -> dict[str, np.ndarray]:
    return {k: t.data for k, t in named_tensors(params).items()}

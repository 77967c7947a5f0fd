"""Regenerate the golden fixtures under ``fixtures/``.

Two tiers:

* analytic: outputs are forced by the weights (residual identity, all-zero
  kernels), expected values are written down directly, tolerance 0;
* oracle: expected values come from the loop-based code in
  :mod:`msconv.reference`, tolerance 1e-9 absolute.

Usage: ``python3 tools/make_fixtures.py [outdir]``
"""
import argparse
import shutil
from pathlib import Path

import numpy as np

from msconv import reference, runner
from msconv.head import HeadConfig
from msconv.io import write_manifest, write_tensor
from msconv.params import assign, named_tensors

ROOT = Path(__file__).resolve().parent.parent
TINY = dict(L=2, C=4, C_r=2, num_classes=2, anchors_per_loc=1, stack_depth=2, msconv_depth=2,
            shapes=[[6, 6], [3, 3]])


def _blocks(kind, params):
    if kind == "msconv":
        return [params]
    return getattr(params, "blocks", [])


def _offsets_off_grid(kind, params, rng):
    # seeded offsets with fractional parts well away from integers, and
    # non-trivial mask logits, so the sampler is actually exercised
    for b in _blocks(kind, params):
        if b.offset_gen is None:
            continue
        kshape = b.offset_gen.kernel.shape
        assign(b, "offset_gen.kernel", rng.normal(0.0, 0.02, size=kshape))
        bias = rng.integers(-1, 2, size=kshape[0]) + rng.uniform(0.3, 0.7, size=kshape[0])
        assign(b, "offset_gen.bias", bias)


def _save(outdir: Path, name: str, kind: str, cfg: HeadConfig, params, xs, expected, atol):
    d = outdir / name
    if d.exists():
        shutil.rmtree(d)
    for sub in ("inputs", "params", "expected"):
        (d / sub).mkdir(parents=True)
    refs = {"inputs": {}, "params": {}, "expected": {}}
    for section, tensors in (("inputs", dict(zip(runner.input_names(cfg), xs))),
                             ("params", named_tensors(params)),
                             ("expected", expected)):
        for tname, t in tensors.items():
            rel = f"{section}/{tname}.mst"
            write_tensor(t, d / rel)
            refs[section][tname] = rel
    write_manifest(d / "manifest.json", runner.config_to_dict(kind, cfg), refs["inputs"],
                   refs["params"], refs["expected"], atol)
    print(f"{name}: {len(expected)} outputs, atol={atol:g}")


def residual_identity(outdir):
    kind, cfg = runner.parse_config(dict(TINY, kind="msconv"))
    params = runner.init_params(kind, cfg, seed=11)
    for name, t in named_tensors(params).items():
        if not name.startswith("reduce."):
            assign(params, name, np.zeros(t.shape))
    k = params.out.kernel.shape
    centre = np.zeros(k)
    centre[np.arange(k[0]), np.arange(k[0]), 1, 1] = 1.0
    assign(params, "out.kernel", centre)
    xs = runner.seeded_inputs(cfg, seed=12)
    _save(outdir, "analytic_residual_identity", kind, cfg, params, xs,
          {f"y_{l + 1}": x for l, x in enumerate(xs)}, 0.0)


def zero_weight_head(outdir, kind):
    _, cfg = runner.parse_config(dict(TINY, kind=kind))
    params = runner.init_params(kind, cfg, seed=21)
    for name, t in named_tensors(params).items():
        if name.endswith(".kernel"):
            assign(params, name, np.zeros(t.shape))
    xs = runner.seeded_inputs(cfg, seed=22)
    expected = {}
    for l, (h, w) in enumerate(cfg.shapes, 1):
        for br, pred in (("cls", params.cls_pred), ("reg", params.reg_pred)):
            b = pred.bias.data
            expected[f"{br}_{l}"] = np.broadcast_to(b[None, :, None, None],
                                                    (cfg.batch, b.size, h, w)).copy()
    _save(outdir, f"analytic_zero_weight_{kind}", kind, cfg, params, xs, expected, 0.0)


def oracle(outdir, name, kind, raw, seed):
    kind, cfg = runner.parse_config(dict(raw, kind=kind))
    params = runner.init_params(kind, cfg, seed)
    _offsets_off_grid(kind, params, np.random.default_rng(seed + 1))
    xs = runner.seeded_inputs(cfg, seed + 2)
    P = {n: t.data for n, t in named_tensors(params).items()}
    expected = reference.run(kind, runner.config_to_dict(kind, cfg), P, [x.data for x in xs])
    _save(outdir, name, kind, cfg, params, xs, expected, 1e-9)


def main(outdir=ROOT / "fixtures"):
    outdir = Path(outdir)
    outdir.mkdir(exist_ok=True)
    residual_identity(outdir)
    zero_weight_head(outdir, "baseline_head")
    zero_weight_head(outdir, "msconv_head")
    oracle(outdir, "oracle_msconv_k1", "msconv", TINY, 100)
    oracle(outdir, "oracle_msconv_k3_gl2", "msconv", dict(TINY, k=3, l_gl=2), 200)
    oracle(outdir, "oracle_msconv_nearest_3lvl", "msconv",
           dict(TINY, L=3, C=6, C_r=3, shapes=[[7, 5], [4, 3], [2, 2]], resize_up="nearest",
                batch=2), 300)
    oracle(outdir, "oracle_msconv_ablation_ca_only", "msconv", dict(TINY, use_sa=False), 400)
    oracle(outdir, "oracle_baseline_head", "baseline_head", TINY, 500)
    oracle(outdir, "oracle_msconv_head", "msconv_head", TINY, 600)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description="regenerate the golden fixture directories")
    ap.add_argument("outdir", nargs="?", default=ROOT / "fixtures")
    main(ap.parse_args().outdir)

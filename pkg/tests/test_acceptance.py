"""Acceptance criteria, one test each.

Every test records a one-line verdict in ``RESULTS``; the terminal summary
hook in ``conftest.py`` prints them as a block at the end of the run.
"""
import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from msconv import accounting, gradsuite, reference, runner
from msconv.block import MSConvConfig, context_attention, init_msconv_params, msconv_forward
from msconv.head import HeadConfig, init_baseline_params, init_msconv_head_params
from msconv.io import load_manifest
from msconv.ops import ConvWeights, conv2d, modulated_deform_conv2d
from msconv.params import assign, count_allocated, named_tensors
from msconv.pyramid import connection_cost, gather, leading_order_ratio, scatter
from msconv.tensor import Tensor

ROOT = Path(__file__).resolve().parent.parent
RESULTS: dict[int, str] = {}


def record(n, ok, detail):
    RESULTS[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    assert ok, RESULTS[n]


def test_01_gradient_suite():
    t0 = time.perf_counter()
    worst, worst_label, failed, count = 0.0, "", [], 0
    for op in gradsuite.REGISTRY:
        for label, rep in gradsuite.run(op, seed=0):
            count += 1
            if rep.max_rel_err > worst:
                worst, worst_label = rep.max_rel_err, label
            if not rep.passed:
                failed.append(f"{label}={rep.max_rel_err:.1e}")
    elapsed = time.perf_counter() - t0
    ok = not failed and elapsed < 300
    record(1, ok, f"{count} cases, max rel err {worst:.2e} ({worst_label}), {elapsed:.0f} s"
           + (f"; failing: {', '.join(failed)}" if failed else ""))


def test_02_conv_oracle():
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        groups = (1, 2, 4)[seed % 3]
        k = (1, 3)[(seed // 3) % 2]
        c_in, c_out = groups * int(rng.integers(1, 4)), groups * int(rng.integers(1, 4))
        x = rng.normal(size=(int(rng.integers(1, 3)), c_in, int(rng.integers(3, 8)), int(rng.integers(3, 8))))
        w, b = rng.normal(size=(c_out, c_in // groups, k, k)), rng.normal(size=c_out)
        got = conv2d(Tensor(x), ConvWeights(Tensor(w), Tensor(b), groups=groups)).data
        worst = max(worst, float(np.max(np.abs(got - reference.conv2d(x, w, b, groups=groups)))))
    record(2, worst <= 1e-12, f"50 cases, max abs err {worst:.1e} (<= 1e-12)")


def test_03_deform_degeneracy():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(10_000 + seed)
        groups = (1, 2)[seed % 2]
        dg = (1, 2)[(seed // 2) % 2]
        k = (1, 3)[(seed // 4) % 2]
        n, c, h, w = 2, 4, int(rng.integers(3, 7)), int(rng.integers(3, 7))
        x = Tensor(rng.normal(size=(n, c, h, w)))
        cw = ConvWeights(Tensor(rng.normal(size=(4, c // groups, k, k))), Tensor(rng.normal(size=4)),
                         groups=groups)
        off = Tensor(np.zeros((n, 2 * dg * k * k, h, w)))
        mask = Tensor(np.ones((n, dg * k * k, h, w)))
        d = modulated_deform_conv2d(x, off, mask, cw, deform_groups=dg).data
        worst = max(worst, float(np.max(np.abs(d - conv2d(x, cw).data))))
    record(3, worst <= 1e-12, f"20 cases, max abs diff {worst:.1e} (<= 1e-12)")


def test_04_gather_scatter_identities():
    rng = np.random.default_rng(4)
    shapes = [(9, 7), (5, 4), (3, 2), (1, 1)]
    checks = 0
    ok = True
    for up in ("bilinear", "nearest"):
        for l_gl in range(1, 5):
            D = [Tensor(rng.normal(size=(2, 3, h, w))) for h, w in shapes]
            phi = gather(D, l_gl, up)
            Q = scatter(phi, shapes, up)
            sl = phi.data[:, 3 * (l_gl - 1):3 * l_gl]
            ok &= Q[l_gl - 1].data.tobytes() == phi.data.tobytes()
            ok &= sl.tobytes() == D[l_gl - 1].data.tobytes()
            checks += 2
    D1 = [Tensor(rng.normal(size=(1, 3, 6, 6)))]
    phi = gather(D1)
    ok &= scatter(phi, [(6, 6)])[0].data.tobytes() == D1[0].data.tobytes()
    ok &= phi.data.tobytes() == D1[0].data.tobytes()
    record(4, bool(ok), f"Q^l_gl == Phi and Phi slice == D^l_gl bit-exact over {checks} checks; L=1 identity")


def _random_pyramid_shapes(rng, L):
    h, w = int(rng.integers(1, 17)), int(rng.integers(1, 17))
    out = [(h, w)]
    for _ in range(L - 1):
        h, w = int(rng.integers(1, h + 1)), int(rng.integers(1, w + 1))
        out.append((h, w))
    return out


def test_05_shape_contract():
    rng = np.random.default_rng(5)
    failures = 0
    n_cfg = 120
    for _ in range(n_cfg):
        L = int(rng.integers(1, 7))
        C = int(rng.integers(4, 65))
        cfg = MSConvConfig(L=L, C=C, C_r=int(rng.integers(1, C + 1)), l_gl=int(rng.integers(1, L + 1)),
                           k=int(rng.choice([1, 3])), resize_up=str(rng.choice(["bilinear", "nearest"])))
        shapes = _random_pyramid_shapes(rng, L)
        n = int(rng.integers(1, 3))
        X = [Tensor(rng.normal(size=(n, C, h, w))) for h, w in shapes]
        Y = msconv_forward(X, init_msconv_params(cfg, rng), cfg)
        failures += [y.shape for y in Y] != [x.shape for x in X]
    record(5, failures == 0, f"{n_cfg} random configs (L 1..6, C 4..64), {failures} shape failures")


def test_06_residual_identity():
    rng = np.random.default_rng(6)
    ok = True
    for k in (1, 3):
        cfg = MSConvConfig(L=3, C=5, C_r=2, k=k)
        p = init_msconv_params(cfg, rng)
        for name, t in named_tensors(p).items():
            if not name.startswith("reduce."):
                assign(p, name, np.zeros(t.shape))
        centre = np.zeros((5, 5, 3, 3))
        centre[np.arange(5), np.arange(5), 1, 1] = 1.0
        assign(p, "out.kernel", centre)
        X = [Tensor(rng.normal(size=(2, 5, h, w))) for h, w in [(7, 6), (4, 3), (2, 2)]]
        ok &= all(y.data.tobytes() == x.data.tobytes() for y, x in zip(msconv_forward(X, p, cfg), X))
    p = init_msconv_params(MSConvConfig(L=2, C=5, C_r=2), rng)
    for name in ("ca_local", "ca_global", "ca_out"):
        for leaf in ("kernel", "bias"):
            assign(p, f"{name}.{leaf}", np.zeros(getattr(getattr(p, name), leaf).shape))
    M = Tensor(rng.normal(size=(2, 5, 6, 4)))
    O, S = context_attention(M, p)
    half = bool(np.all(S.data == 0.5)) and O.data.tobytes() == (0.5 * M.data).tobytes()
    record(6, bool(ok and half), "Y == X bit-exact (k=1,3); zero CA weights give S == 0.5 and O == 0.5*M exactly")


def test_07_complexity_claim():
    C, C_r = 256, 64
    exact = all(connection_cost(C, C_r, L, mode="full").resizes == C * L * (L - 1)
                and connection_cost(C, C_r, L).resizes == 2 * C_r * (L - 1) for L in range(1, 17))
    full = {L: connection_cost(C, C_r, L, mode="full").resizes for L in (2, 4, 8)}
    gs = {L: connection_cost(C, C_r, L).resizes for L in (2, 4, 8)}
    # quadratic: resizes / (L*(L-1)) constant; linear: resizes / (L-1) constant
    quad = len({full[L] // (L * (L - 1)) for L in full}) == 1 and all(full[L] % (L * (L - 1)) == 0 for L in full)
    lin = len({gs[L] // (L - 1) for L in gs}) == 1 and all(gs[L] % (L - 1) == 0 for L in gs)
    ratio = leading_order_ratio(C, C_r, 5)
    ok = exact and quad and lin and ratio == 20
    record(7, ok, f"full {[full[L] for L in (2, 4, 8)]} (quadratic), gather/scatter "
           f"{[gs[L] for L in (2, 4, 8)]} (linear); leading-order ratio {ratio}")


def test_08_accounting_exactness():
    rng = np.random.default_rng(8)
    mismatches = 0
    for _ in range(20):
        L = int(rng.integers(1, 6))
        C = int(rng.integers(2, 33))
        shapes = _random_pyramid_shapes(rng, L)
        cfg = HeadConfig(L=L, C=C, C_r=int(rng.integers(1, C + 1)), shapes=shapes,
                         num_classes=int(rng.integers(1, 9)), anchors_per_loc=int(rng.integers(1, 10)),
                         stack_depth=int(rng.integers(0, 5)), msconv_depth=int(rng.integers(0, 5)),
                         k=int(rng.choice([1, 3])), use_sa=bool(rng.integers(0, 2)),
                         use_ca=bool(rng.integers(0, 2)))
        for variant, init in (("baseline", init_baseline_params), ("msconv", init_msconv_head_params)):
            rep = accounting.count_params(cfg, variant)
            mismatches += rep.total_params != count_allocated(init(cfg, rng)) or not rep.consistent()
    hand = accounting.conv_params(256, 256, 3) == 590_080 and accounting.conv_params(256, 64, 1) == 16_448
    cmp = accounting.compare(HeadConfig())
    ok = mismatches == 0 and hand and cmp["params_delta_sign"] in "+-0"
    record(8, ok, f"20 random configs x 2 variants, {mismatches} mismatches; 590,080 / 16,448 reproduced; "
           f"head delta {cmp['params_delta']:+,d} ({cmp['params_delta_sign']}), published totals "
           f"{cmp['published_params_m']['baseline']} M / {cmp['published_params_m']['msconv']} M (context only)")


def test_09_determinism(tmp_path):
    cfg = HeadConfig(L=3, C=6, C_r=3, num_classes=2, anchors_per_loc=2, stack_depth=2, msconv_depth=2,
                     k=3, shapes=[(9, 8), (5, 4), (3, 2)], batch=2)
    config = tmp_path / "config.json"
    inputs = tmp_path / "inputs"
    inputs.mkdir()
    from msconv.io import write_tensor
    for kind in ("msconv", "msconv_head"):
        config.write_text(json.dumps(runner.config_to_dict(kind, cfg)))
        for name, x in zip(runner.input_names(cfg), runner.seeded_inputs(cfg, 1)):
            write_tensor(x, inputs / f"{name}.mst")
        runs = []
        for i, threads in enumerate(["1", "1", "2", "4"]):
            out = tmp_path / f"{kind}_{i}"
            env = dict(os.environ, MSCONV_THREADS=threads)
            subprocess.run([sys.executable, "-m", "msconv.cli", "run", "--config", str(config),
                            "--inputs", str(inputs), "--seed", "7", "--out", str(out)],
                           check=True, env=env, capture_output=True)
            runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        same = all(r == runs[0] for r in runs[1:]) and len(runs[0]) > 0
        if not same:
            break
    record(9, same, "cli run byte-identical over repeated runs and MSCONV_THREADS in {1, 2, 4} "
           "(msconv and msconv_head)")


def test_10_golden_fixtures():
    from msconv.cli import main
    analytic = oracle = 0
    ok = True
    for path in sorted((ROOT / "fixtures").glob("*/manifest.json")):
        m = load_manifest(path)
        if path.parent.name.startswith("analytic"):
            ok &= m.atol == 0 and m.rtol == 0
            analytic += 1
        else:
            ok &= m.atol <= 1e-9 and m.rtol == 0
            oracle += 1
        ok &= main(["verify", "--manifest", str(path)]) == 0
    ok &= analytic >= 1 and oracle >= 1
    record(10, bool(ok), f"{analytic} analytic fixtures at tolerance 0, {oracle} oracle fixtures at 1e-9 abs")

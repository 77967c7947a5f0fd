"""Compare the compiled and numpy kernel backends.

Usage: ``python3 benchmarks/bench_kernels.py [--repeat N] [--threads T]``

Times conv2d and modulated deformable conv, forward and forward+backward, on
a few pyramid-level sizes, and checks both backends agree.
"""
import argparse
import os
import timeit

import numpy as np

from msconv import kernels
from msconv.ops import ConvWeights, conv2d, modulated_deform_conv2d
from msconv.tensor import Tensor, backward, parameter, sum_all

SIZES = [(1, 64, 40, 40), (1, 64, 20, 20), (2, 32, 10, 10)]


def _cases(n, c, h, w, rng):
    x = parameter(rng.normal(size=(n, c, h, w)))
    cw = ConvWeights.init(rng, c, c, 3)
    dg = 4
    off = parameter(rng.normal(0, 1.5, size=(n, 2 * dg * 9, h, w)))
    mask = parameter(rng.uniform(0.1, 0.9, size=(n, dg * 9, h, w)))
    dw = ConvWeights.init(rng, c, c, 3, groups=dg)

    def conv_fwd():
        return conv2d(x, cw)

    def deform_fwd():
        return modulated_deform_conv2d(x, off, mask, dw, deform_groups=dg)

    def with_bwd(fn):
        def run():
            out = fn()
            backward(sum_all(out))
            return out
        return run

    return {"conv2d fwd": conv_fwd, "conv2d fwd+bwd": with_bwd(conv_fwd),
            "deform fwd": deform_fwd, "deform fwd+bwd": with_bwd(deform_fwd)}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    os.environ["MSCONV_THREADS"] = str(args.threads)
    if "cython" not in kernels.BACKENDS:
        print("compiled backend not built; only the numpy path is available")
        return
    print(f"threads={args.threads} repeat={args.repeat} (best of, milliseconds)")
    print(f"{'shape':18s} {'case':16s} {'cython':>9s} {'python':>9s} {'speedup':>8s}  max|diff|")
    for shape in SIZES:
        timings, outs = {}, {}
        for name in ("cython", "python"):
            kernels.set_backend(name)
            cases = _cases(*shape, np.random.default_rng(0))
            for label, fn in cases.items():
                outs[name, label] = fn().data
                t = min(timeit.repeat(fn, number=1, repeat=args.repeat))
                timings[name, label] = t * 1e3
        for label in cases:
            c, p = timings["cython", label], timings["python", label]
            diff = np.abs(outs["cython", label] - outs["python", label]).max()
            print(f"{str(shape):18s} {label:16s} {c:9.2f} {p:9.2f} {p / c:7.2f}x  {diff:.1e}")
    kernels.set_backend("cython")


if __name__ == "__main__":
    main()

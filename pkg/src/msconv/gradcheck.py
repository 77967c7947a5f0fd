"""Central-difference gradient checking.

The tape gradients are computed in float64 as usual.  The finite-difference
side re-runs the forward in the platform's extended precision (where numpy
offers one) so that its own cancellation noise, roughly ``eps * |f| / step``,
stays far below the tolerance even for tiny gradient entries.

By default the central difference at ``step`` is combined with one at
``step / 2`` (one Richardson level), which cancels the O(step^2) truncation
term.  Without it, an entry whose derivative is small compared with its
curvature can miss the tolerance although the tape gradient is right.
``method="central"`` gives the plain two-point estimate.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from msconv.tensor import Tensor, backward, mul, no_grad, sum_all, add, constant, working_precision

STEP = 1e-5
TOL = 1e-6
FLOOR = 1e-8
WIDE = np.longdouble


@dataclass
class GradReport:
    max_rel_err: float
    passed: bool
    worst: tuple[str, tuple[int, ...]] | None
    n_checked: int


def _as_list(out):
    return list(out) if isinstance(out, (list, tuple)) else [out]


def _projected_loss(outs, probes):
    total = None
    for o, r in zip(outs, probes):
        term = sum_all(mul(o, r))
        total = term if total is None else add(total, term)
    return total


def gradcheck(fn: Callable[[], Tensor | Sequence[Tensor]], wrt: Sequence[Tensor],
              seed: int = 0, step: float = STEP, tol: float = TOL,
              method: str = "richardson") -> GradReport:
    """Compare tape gradients of ``fn`` against central differences.

    ``fn`` takes no arguments and reads the tensors in ``wrt`` from its
    closure.  The scalar under test is ``sum(out * r)`` with a fixed seeded
    probe ``r`` per output so every output element matters.  Perturbations
    are written into the tensors' buffers and undone before returning.
    """
    if method not in ("central", "richardson"):
        raise ValueError(f"unknown difference method {method!r}")
    outs = _as_list(fn())
    rng = np.random.default_rng(seed)
    probes = [constant(rng.uniform(0.5, 1.5, size=o.shape) * rng.choice([-1.0, 1.0], size=o.shape))
              for o in outs]
    loss = _projected_loss(outs, probes)
    grads = backward(loss, params=wrt)

    wide_probes = [r.data.astype(WIDE).ravel() for r in probes]

    def f():
        with no_grad(), working_precision(WIDE):
            res = _as_list(fn())
        return sum(np.dot(o.data.ravel(), r) for o, r in zip(res, wide_probes))

    saved = [t.data for t in wrt]
    for t in wrt:
        t.data = t.data.astype(WIDE)
    worst, worst_at, n = 0.0, None, 0
    h = WIDE(step)

    def central(flat, i, orig, hh):
        flat[i] = orig + hh
        fp = f()
        flat[i] = orig - hh
        fm = f()
        flat[i] = orig
        return (fp - fm) / (2 * hh)

    try:
        for t in wrt:
            analytic = grads[t]
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                d1 = central(flat, i, orig, h)
                if method == "central":
                    numeric = float(d1)
                else:
                    numeric = float((4 * central(flat, i, orig, h / 2) - d1) / 3)
                a = analytic.reshape(-1)[i]
                if not (np.isfinite(numeric) and np.isfinite(a)):
                    raise FloatingPointError(f"non-finite gradient for {t.name or t.shape}")
                err = abs(a - numeric) / max(abs(a), abs(numeric), FLOOR)
                n += 1
                if err > worst or worst_at is None:
                    worst = max(worst, err)
                    worst_at = (t.name, tuple(int(j) for j in np.unravel_index(i, t.shape)))
    finally:
        for t, buf in zip(wrt, saved):
            t.data = buf
    return GradReport(worst, worst < tol, worst_at, n)

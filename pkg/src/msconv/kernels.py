"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy
implementation takes over.  ``MSCONV_BACKEND=python`` forces the fallback and
``MSCONV_THREADS`` sets the worker count of the compiled loops (results are
bit-identical for any value).
"""
import os

import numpy as np

from msconv import _pykernels

try:
    from msconv import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

_active = "cython" if _ckernels is not None and os.environ.get("MSCONV_BACKEND") != "python" else "python"


def backend() -> str:
    return _active


def set_backend(name: str) -> None:
    global _active
    if name not in BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}")
    _active = name


def threads() -> int:
    try:
        return max(1, int(os.environ.get("MSCONV_THREADS", "1")))
    except ValueError:
        return 1


def _pick(*arrays):
    """Backend module plus contiguous inputs; non-float64 data goes to numpy."""
    if all(a.dtype == np.float64 for a in arrays):
        return BACKENDS[_active], [np.ascontiguousarray(a) for a in arrays]
    return _pykernels, [np.asarray(a) for a in arrays]


def im2col(xp, k, stride, ho, wo):
    mod, (xp,) = _pick(xp)
    return mod.im2col(xp, k, stride, ho, wo, threads())


def col2im(col, c, hp, wp, k, stride, ho, wo):
    mod, (col,) = _pick(col)
    return mod.col2im(col, c, hp, wp, k, stride, ho, wo, threads())


def deform_im2col(x, offset, mask, k, pad, dg):
    mod, arrs = _pick(x, offset, mask)
    return mod.deform_im2col(*arrs, k, pad, dg, threads())


def deform_col2im(gcol, x, offset, mask, k, pad, dg):
    mod, arrs = _pick(gcol, x, offset, mask)
    return mod.deform_col2im(*arrs, k, pad, dg, threads())

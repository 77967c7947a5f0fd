"""Dense float64 tensors and a reverse-mode tape.

Every differentiable operation in the package produces its output through
:func:`record`, which attaches the parents and a backward rule.  Nodes carry a
monotonically increasing sequence number, so the tape is append-only by
construction and :func:`backward` can replay it in strict reverse recording
order.
"""
from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "NonFiniteError", "no_grad", "is_grad_enabled", "working_precision", "tensor_create",
    "parameter", "constant", "add", "mul", "scale", "sigmoid", "relu",
    "activation", "elementwise", "concat_channels", "slice_channels",
    "sum_all", "backward",
]

_SEQ = itertools.count()
_GRAD_ENABLED = True
_DTYPE = np.float64


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf from finite inputs."""


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def working_precision(dtype):
    """Evaluate forwards in another float type (used by the gradient checker).

    Only the numpy kernel path supports types other than float64.
    """
    global _DTYPE
    prev, _DTYPE = _DTYPE, np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE = prev


class Tensor:
    """Immutable float64 array plus an optional handle into the tape.

    Feature maps are 4-D ``(N, C, H, W)``; convolution kernels are 4-D
    ``(C_out, C_in/groups, k, k)`` and biases 1-D.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.array(data, dtype=_DTYPE, order="C", copy=True)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._seq = next(_SEQ)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # skip the defensive copy for arrays freshly produced by an op
        t = cls.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=_DTYPE)
        arr.flags.writeable = False
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.name = ""
        t._parents = ()
        t._backward = None
        t._seq = next(_SEQ)
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    @property
    def tracked(self) -> bool:
        return self.requires_grad or self._backward is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{what} produced non-finite values")


def record(out: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, what: str) -> Tensor:
    """Wrap ``out`` as a tensor and, if any parent is tracked, append a tape node.

    ``backward_fn(grad_out)`` returns one gradient array (or ``None``) per parent.
    """
    _check_finite(out, what)
    t = Tensor._wrap(out)
    if _GRAD_ENABLED and any(p.tracked for p in parents):
        t._parents = tuple(parents)
        t._backward = backward_fn
        t.name = what
    return t


# ---------------------------------------------------------------------------
# creation

def tensor_create(shape: Sequence[int], fill: str = "zeros", value: float = 0.0,
                  seed: int | None = None, std: float = 1.0,
                  requires_grad: bool = False, name: str = "") -> Tensor:
    """Create a tensor filled with zeros, a constant, or seeded normal noise.

    ``fill="normal"`` uses a PCG64 generator seeded with ``seed``, so the same
    ``(seed, shape, std)`` always yields bit-identical data.
    """
    shape = tuple(int(d) for d in shape)
    if any(d < 0 for d in shape):
        raise ValueError(f"negative dimension in {shape}")
    count = 1
    for d in shape:
        count *= d
    if count * 8 > np.iinfo(np.int64).max:
        raise OverflowError(f"element count of {shape} overflows")
    if fill == "zeros":
        arr = np.zeros(shape)
    elif fill == "constant":
        arr = np.full(shape, float(value))
    elif fill == "normal":
        if seed is None:
            raise ValueError("seeded-normal fill needs a seed")
        arr = np.random.default_rng(seed).normal(0.0, std, size=shape)
    else:
        raise ValueError(f"unknown fill {fill!r}")
    return Tensor(arr, requires_grad=requires_grad, name=name)


def parameter(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(data)


# ---------------------------------------------------------------------------
# elementwise

def _broadcast_kind(a: Tensor, b: Tensor) -> bool:
    """True if ``b`` is an (N, C, 1, 1) tensor broadcast over a's spatial dims."""
    if a.shape == b.shape:
        return False
    if (a.data.ndim == 4 and b.data.ndim == 4 and b.shape[2:] == (1, 1)
            and b.shape[:2] == a.shape[:2]):
        return True
    raise ValueError(f"incompatible shapes {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    bc = _broadcast_kind(a, b)

    def bw(g):
        gb = g.sum(axis=(2, 3), keepdims=True) if bc else g
        return g, gb

    return record(a.data + b.data, (a, b), bw, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    bc = _broadcast_kind(a, b)
    ad, bd = a.data, b.data

    def bw(g):
        ga = g * bd
        gb = g * ad
        if bc:
            gb = gb.sum(axis=(2, 3), keepdims=True)
        return ga, gb

    return record(ad * bd, (a, b), bw, "mul")


def elementwise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    if kind == "add":
        return add(a, b)
    if kind == "mul":
        return mul(a, b)
    raise ValueError(f"unknown elementwise kind {kind!r}")


def scale(a: Tensor, c: float) -> Tensor:
    return record(a.data * c, (a,), lambda g: (g * c,), "scale")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    # clamp into the open interval so gates and masks never reach exactly 0 or 1
    one = out.dtype.type(1)
    out = np.clip(out, np.finfo(out.dtype).tiny, np.nextafter(one, out.dtype.type(0)))
    return record(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return record(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,), "relu")


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "relu":
        return relu(x)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# channel plumbing

def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ValueError("concat of an empty list")
    n, _, h, w = xs[0].shape
    for t in xs:
        if t.data.ndim != 4 or (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise ValueError(f"cannot concat {t.shape} with {xs[0].shape}")
    bounds = np.cumsum([0] + [t.shape[1] for t in xs])

    def bw(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return record(np.concatenate([t.data for t in xs], axis=1), tuple(xs), bw, "concat")


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start <= stop <= x.shape[1]:
        raise ValueError(f"channel slice [{start}, {stop}) out of range for {x.shape}")

    def bw(g):
        gx = np.zeros(x.shape)
        gx[:, start:stop] = g
        return (gx,)

    return record(x.data[:, start:stop], (x,), bw, "slice")


def sum_all(x: Tensor) -> Tensor:
    """Sum of every element, shaped ``(1, 1, 1, 1)``."""
    shape = x.shape
    return record(np.array(x.data.sum()).reshape(1, 1, 1, 1), (x,),
                  lambda g: (np.full(shape, g.reshape(())),), "sum")


# ---------------------------------------------------------------------------
# reverse pass

def _collect(loss: Tensor) -> list[Tensor]:
    seen: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen[id(t)] = t
        for p in t._parents:
            if p._seq >= t._seq:
                raise RuntimeError("tape is not topologically ordered (cycle?)")
            stack.append(p)
    return sorted(seen.values(), key=lambda t: t._seq, reverse=True)


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Propagate d(loss)/d(.) through the tape.

    Returns a map from every reachable leaf with ``requires_grad`` to its
    gradient, and also stores it on ``leaf.grad``.  Leaves listed in
    ``params`` but unreachable from ``loss`` get zero gradients.
    """
    if loss.shape != (1, 1, 1, 1):
        raise ValueError(f"loss must be a (1,1,1,1) scalar, got {loss.shape}")
    order = _collect(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1, 1, 1))}
    result: dict[Tensor, np.ndarray] = {}
    for node in order:
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g
                result[node] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.tracked:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.array(pg, dtype=np.float64)
    if params is not None:
        for p in params:
            if p not in result:
                p.grad = np.zeros(p.shape)
                result[p] = p.grad
    return result

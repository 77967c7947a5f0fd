"""Walk and overwrite the learnable tensors of nested parameter dataclasses.

Names are dotted attribute paths with list indices, e.g. ``reduce.0.kernel``
or ``blocks.1.ca_out.bias``.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from msconv.ops import ConvWeights
from msconv.tensor import Tensor, parameter


def named_tensors(obj, prefix: str = "") -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    if isinstance(obj, ConvWeights):
        for k, t in obj.tensors().items():
            out[prefix + k] = t
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            out.update(named_tensors(item, f"{prefix}{i}."))
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            out.update(named_tensors(getattr(obj, f.name), f"{prefix}{f.name}."))
    return out


def count_allocated(obj) -> int:
    return sum(t.size for t in named_tensors(obj).values())


def assign(obj, name: str, value) -> None:
    """Replace the tensor at ``name`` with a fresh parameter holding ``value``."""
    *path, leaf = name.split(".")
    for part in path:
        obj = obj[int(part)] if isinstance(obj, (list, tuple)) else getattr(obj, part)
    if not isinstance(obj, ConvWeights) or leaf not in ("kernel", "bias"):
        raise KeyError(name)
    old = getattr(obj, leaf)
    arr = np.asarray(value.data if isinstance(value, Tensor) else value, dtype=np.float64)
    if old is None or old.shape != arr.shape:
        raise ValueError(f"{name}: shape {arr.shape} does not match {None if old is None else old.shape}")
    setattr(obj, leaf, parameter(arr, name=name))


def load(obj, tensors: dict) -> None:
    """Assign every entry of ``tensors``; all names of ``obj`` must be covered."""
    expected = set(named_tensors(obj))
    missing = expected - set(tensors)
    extra = set(tensors) - expected
    if missing or extra:
        raise KeyError(f"parameter names mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for name in sorted(tensors):
        assign(obj, name, tensors[name])


def tag_names(obj) -> None:
    for name, t in named_tensors(obj).items():
        t.name = name

"""Binary tensor files and JSON fixture manifests.

Tensor file layout (all little-endian)::

    b"MST1" | dtype u8 (0=float64, 1=float32) | ndim u8 | ndim x u64 dims | payload

The payload is row-major; float32 files are widened to float64 on read.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from msconv.tensor import Tensor

MAGIC = b"MST1"
DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}


class TensorFileError(Exception):
    code = "io"


class BadMagic(TensorFileError):
    code = "bad_magic"


class TruncatedPayload(TensorFileError):
    code = "truncated"


class UnknownDtype(TensorFileError):
    code = "unknown_dtype"


class SchemaError(Exception):
    """A config or manifest is structurally invalid."""


def encode_tensor(t, dtype: int = 0) -> bytes:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
    if dtype not in DTYPES:
        raise UnknownDtype(f"dtype code {dtype}")
    if arr.ndim > 255:
        raise ValueError("too many dimensions")
    header = MAGIC + struct.pack("<BB", dtype, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=DTYPES[dtype]).tobytes()


def decode_tensor(buf: bytes, source: str = "<bytes>") -> Tensor:
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise BadMagic(f"{source}: bad magic")
    dtype, ndim = struct.unpack_from("<BB", buf, 4)
    if dtype not in DTYPES:
        raise UnknownDtype(f"{source}: unknown dtype code {dtype}")
    head = 6 + 8 * ndim
    if len(buf) < head:
        raise TruncatedPayload(f"{source}: header cut short")
    dims = struct.unpack_from(f"<{ndim}Q", buf, 6)
    count = int(np.prod(dims, dtype=object)) if ndim else 1
    need = count * DTYPES[dtype].itemsize
    if len(buf) - head != need:
        raise TruncatedPayload(f"{source}: payload is {len(buf) - head} bytes, expected {need}")
    arr = np.frombuffer(buf, dtype=DTYPES[dtype], count=count, offset=head).reshape(dims)
    return Tensor(arr.astype(np.float64))


def write_tensor(t, path, dtype: int = 0) -> None:
    Path(path).write_bytes(encode_tensor(t, dtype))


def read_tensor(path) -> Tensor:
    path = Path(path)
    return decode_tensor(path.read_bytes(), str(path))


# ---------------------------------------------------------------------------
# manifests

@dataclass
class Manifest:
    config: dict
    inputs: dict[str, Path]
    params: dict[str, Path]
    expected: dict[str, Path]
    atol: float
    rtol: float
    path: Path

    def load_inputs(self) -> dict[str, Tensor]:
        return {k: read_tensor(p) for k, p in self.inputs.items()}

    def load_params(self) -> dict[str, Tensor]:
        return {k: read_tensor(p) for k, p in self.params.items()}

    def load_expected(self) -> dict[str, Tensor]:
        return {k: read_tensor(p) for k, p in self.expected.items()}


def _names(section, key, base):
    if not isinstance(section, dict):
        raise SchemaError(f"manifest field {key!r} must be an object of name -> path")
    out = {}
    for name, rel in section.items():
        if not isinstance(rel, str):
            raise SchemaError(f"{key}.{name} must be a path string")
        p = (base / rel).resolve()
        if not p.is_file():
            raise FileNotFoundError(f"{key}.{name}: {p} does not exist")
        out[name] = p
    return out


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: {e}") from None
    for key in ("config", "inputs", "params", "expected", "tolerance"):
        if key not in raw:
            raise SchemaError(f"{path}: missing field {key!r}")
    if not isinstance(raw["config"], dict):
        raise SchemaError("config must be an object")
    tol = raw["tolerance"]
    if not isinstance(tol, dict) or not {"abs", "rel"} <= set(tol):
        raise SchemaError("tolerance must be {\"abs\": ..., \"rel\": ...}")
    base = path.parent
    return Manifest(raw["config"], _names(raw["inputs"], "inputs", base),
                    _names(raw["params"], "params", base), _names(raw["expected"], "expected", base),
                    float(tol["abs"]), float(tol["rel"]), path)


def write_manifest(path, config: dict, inputs: dict, params: dict, expected: dict,
                   atol: float, rtol: float = 0.0) -> None:
    doc = {"config": config, "inputs": inputs, "params": params, "expected": expected,
           "tolerance": {"abs": atol, "rel": rtol}}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

"""Named-tensor checkpoints: a text manifest plus one raw payload file.

The manifest lists one entry per tensor (name, shape, dtype, byte
offset into the payload); the payload is the little-endian
concatenation of the flat arrays. Round-trips are bit-exact.
"""

from __future__ import annotations

import os

import numpy as np

from .autodiff import Tensor

MANIFEST_SUFFIX = ".manifest.txt"
PAYLOAD_SUFFIX = ".bin"

_DTYPE_CODES = {"float64": "<f8", "float32": "<f4"}


def _as_array(value) -> np.ndarray:
    return value.data if isinstance(value, Tensor) else np.asarray(value)


def save_tensors(prefix: str, named: dict) -> tuple[str, str]:
    """Write ``{name: tensor-or-array}`` under ``prefix``; returns file paths."""
    manifest_path = prefix + MANIFEST_SUFFIX
    payload_path = prefix + PAYLOAD_SUFFIX
    lines = ["# dualplane checkpoint manifest: name\tshape\tdtype\toffset"]
    offset = 0
    chunks = []
    for name, value in named.items():
        arr = _as_array(value)
        dtype = str(arr.dtype)
        if dtype not in _DTYPE_CODES:
            raise ValueError(f"checkpoint: unsupported dtype {dtype} for {name!r}")
        raw = np.ascontiguousarray(arr).astype(_DTYPE_CODES[dtype], copy=False).tobytes()
        shape = ",".join(str(s) for s in arr.shape)
        lines.append(f"{name}\t{shape}\t{dtype}\t{offset}")
        chunks.append(raw)
        offset += len(raw)
    os.makedirs(os.path.dirname(os.path.abspath(manifest_path)), exist_ok=True)
    with open(manifest_path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(payload_path, "wb") as fh:
        fh.write(b"".join(chunks))
    return manifest_path, payload_path


def load_tensors(prefix: str) -> dict:
    """Read a checkpoint back into ``{name: ndarray}`` (bit-exact)."""
    manifest_path = prefix + MANIFEST_SUFFIX
    payload_path = prefix + PAYLOAD_SUFFIX
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"checkpoint manifest not found: {manifest_path}")
    with open(payload_path, "rb") as fh:
        payload = fh.read()
    named = {}
    with open(manifest_path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            name, shape_text, dtype, offset_text = line.split("\t")
            shape = tuple(int(s) for s in shape_text.split(",")) if shape_text else ()
            code = _DTYPE_CODES[dtype]
            count = int(np.prod(shape)) if shape else 1
            offset = int(offset_text)
            arr = np.frombuffer(payload, dtype=code, count=count, offset=offset)
            named[name] = arr.reshape(shape).astype(dtype, copy=True)
    return named

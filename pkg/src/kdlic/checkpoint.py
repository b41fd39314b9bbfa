"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"LICD" | u32 version | u64 header_len | header (UTF-8 JSON) | payloads

The header lists tensors (name, shape, dtype, frozen) in payload order and
carries arch, role, r, provenance, network specs and free-form metadata.
Payloads are raw float32 arrays, C order.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .codec import ModelState
from .data import FormatError
from .layers import NetworkSpec
from .tensor import Tensor

MAGIC = b"LICD"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
_MAX_HEADER = 64 << 20


def _jsonable(meta: dict) -> dict:
    return json.loads(json.dumps(meta, default=float))


def encode_checkpoint(state: ModelState) -> bytes:
    names = sorted(state.params)
    header = {
        "arch": state.arch,
        "role": state.role,
        "r": state.r,
        "provenance": state.provenance,
        "frozen": state.frozen,
        "specs": {k: v.to_dict() for k, v in sorted(state.specs.items())},
        "meta": _jsonable(state.meta),
        "tensors": [
            {
                "name": n,
                "shape": list(state.params[n].shape),
                "dtype": "float32",
                "frozen": state.frozen[n.split(".", 1)[0]],
            }
            for n in names
        ],
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(state.params[n].data.astype("<f4").tobytes() for n in names)
    return _PREFIX.pack(MAGIC, VERSION, len(head)) + head + body


def decode_checkpoint(buf: bytes) -> ModelState:
    """Parse a checkpoint; any defect raises FormatError before a state is built."""
    if len(buf) < _PREFIX.size:
        raise FormatError("truncated checkpoint prefix", len(buf))
    magic, version, head_len = _PREFIX.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if head_len > _MAX_HEADER or _PREFIX.size + head_len > len(buf):
        raise FormatError(f"header length {head_len} exceeds file", 8)
    pos = _PREFIX.size
    try:
        header = json.loads(buf[pos : pos + head_len].decode("utf-8"))
        tensors = header["tensors"]
        specs = {k: NetworkSpec.from_dict(v) for k, v in header["specs"].items()}
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"corrupt header: {exc}", pos) from None
    pos += head_len
    params: dict[str, Tensor] = {}
    for entry in tensors:
        if entry.get("dtype") != "float32":
            raise FormatError(f"tensor {entry.get('name')}: unsupported dtype {entry.get('dtype')}", pos)
        count = int(np.prod(entry["shape"], dtype=np.int64))
        nbytes = 4 * count
        if pos + nbytes > len(buf):
            raise FormatError(f"tensor {entry['name']}: payload truncated", len(buf))
        arr = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(entry["shape"])
        params[entry["name"]] = Tensor(arr.astype(np.float64), name=entry["name"])
        pos += nbytes
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after payload", pos)
    try:
        return ModelState(
            header["arch"],
            specs,
            params,
            {k: bool(v) for k, v in header["frozen"].items()},
            header["role"],
            header["r"],
            header["provenance"],
            header["meta"],
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"inconsistent header: {exc}", _PREFIX.size) from None


def save_checkpoint(state: ModelState, path: str | os.PathLike) -> None:
    Path(path).write_bytes(encode_checkpoint(state))


def load_checkpoint(path: str | os.PathLike) -> ModelState:
    return decode_checkpoint(Path(path).read_bytes())


def payload_bytes(state: ModelState, modules: tuple[str, ...] | None = None) -> int:
    """Bytes of float32 tensor payload, optionally restricted to some modules."""
    return sum(
        4 * p.data.size
        for n, p in state.params.items()
        if modules is None or n.split(".", 1)[0] in modules
    )

"""Weight container format "LWAW" v1.

Layout: 8-byte magic ``LWAWGT01``; 4-byte little-endian manifest length;
UTF-8 JSON manifest (ordered tensor entries plus a config echo); then raw
little-endian float32 blobs, each 64-byte aligned. Round-trips bit-exactly.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .errors import WeightFormatError

MAGIC = b"LWAWGT01"
_ALIGN = 64


@dataclass
class ParamStore:
    """Named tensors (parameters plus batch-norm running stats) and the
    config echo they were saved with."""

    tensors: "OrderedDict[str, np.ndarray]"
    config: dict


def _align(offset):
    return (offset + _ALIGN - 1) // _ALIGN * _ALIGN


def write_weights(path, arrays, config) -> None:
    entries = []
    blobs = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(np.asarray(arr, dtype="<f4"))
        blobs.append((name, a))
        entries.append({
            "name": name,
            "dtype": "float32",
            "shape": list(a.shape),
            "offset": 0,
            "length": a.nbytes,
        })
    # two-pass: manifest length depends on offsets; offsets depend on manifest
    # length, so iterate until stable (offset digits rarely change twice)
    manifest = {"entries": entries, "config": config}
    raw = b""
    for _ in range(4):
        base = _align(len(MAGIC) + 4 + len(raw))
        offset = base
        for e, (_, a) in zip(entries, blobs):
            offset = _align(offset)
            e["offset"] = offset
            offset += a.nbytes
        new_raw = json.dumps(manifest).encode("utf-8")
        if len(new_raw) == len(raw):
            raw = new_raw
            break
        raw = new_raw
    data_end = offset
    buf = bytearray(data_end)
    buf[: len(MAGIC)] = MAGIC
    buf[len(MAGIC): len(MAGIC) + 4] = len(raw).to_bytes(4, "little")
    buf[len(MAGIC) + 4: len(MAGIC) + 4 + len(raw)] = raw
    for e, (_, a) in zip(entries, blobs):
        buf[e["offset"]: e["offset"] + a.nbytes] = a.tobytes()
    with open(path, "wb") as f:
        f.write(bytes(buf))


def read_weights(path) -> ParamStore:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 4:
        raise WeightFormatError(f"{path}: truncated header")
    if blob[: len(MAGIC)] != MAGIC:
        raise WeightFormatError(
            f"{path}: bad magic {blob[:len(MAGIC)]!r}, expected {MAGIC!r}"
        )
    mlen = int.from_bytes(blob[len(MAGIC): len(MAGIC) + 4], "little")
    mstart = len(MAGIC) + 4
    if len(blob) < mstart + mlen:
        raise WeightFormatError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(blob[mstart: mstart + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFormatError(f"{path}: malformed manifest: {exc}") from exc
    if not isinstance(manifest, dict) or "entries" not in manifest:
        raise WeightFormatError(f"{path}: manifest lacks entries")
    tensors = OrderedDict()
    for e in manifest["entries"]:
        name, shape = e["name"], tuple(e["shape"])
        if e.get("dtype") != "float32":
            raise WeightFormatError(f"{path}: tensor {name!r} has dtype {e.get('dtype')}")
        off, length = int(e["offset"]), int(e["length"])
        want = int(np.prod(shape, dtype=np.int64)) * 4
        if length != want:
            raise WeightFormatError(
                f"{path}: tensor {name!r} length {length} != shape {shape} bytes {want}"
            )
        if off % _ALIGN or off + length > len(blob):
            raise WeightFormatError(f"{path}: tensor {name!r} blob out of bounds")
        tensors[name] = np.frombuffer(blob[off: off + length], dtype="<f4").reshape(shape).copy()
    return ParamStore(tensors=tensors, config=manifest.get("config", {}))

"""Binary field format, JSON/CSV writers and the content-addressed cache.

Binary layout (all little endian)::

    magic  b"SLFD"           4 bytes
    version                  uint32
    header length            uint32
    header                   UTF-8 JSON (n_axis, kind, shape, dtype, extra keys)
    payload                  complex64 or complex128 pairs, C order

Exports default to complex64; caches use complex128 so that a cache hit
reproduces a recomputation exactly.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SLFD"
VERSION = 1
_DTYPES = {"complex64": "<c8", "complex128": "<c16"}


def write_field(path, values, kind: str, n_axis: int, dtype: str = "complex64", **extra):
    values = np.asarray(values)
    header = {"n_axis": int(n_axis), "kind": kind, "shape": list(values.shape), "dtype": dtype}
    header.update(extra)
    hb = json.dumps(header, sort_keys=True).encode()
    payload = np.ascontiguousarray(values.astype(_DTYPES[dtype]))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(hb)))
        fh.write(hb)
        fh.write(payload.tobytes())


def read_field(path):
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a field file")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        header = json.loads(fh.read(hlen).decode())
        data = np.frombuffer(fh.read(), dtype=_DTYPES[header["dtype"]])
    return data.reshape(header["shape"]).astype(complex), header


def _clean(obj):
    """Make an object JSON-safe with stable float text (non-finite -> null)."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return {"re": _clean(obj.real), "im": _clean(obj.imag)}
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def format_value(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else "nan"
    if isinstance(v, (complex, np.complexfloating)):
        return f"{float(v.real)!r}{float(v.imag):+}j"
    if v is None:
        return ""
    return str(v)


def write_csv(path, rows, columns, header: dict | None = None):
    """CSV table; ``header`` entries go first as ``# key: <json>`` comment lines."""
    with open(path, "w", newline="") as fh:
        for key in sorted(header or {}):
            fh.write(f"# {key}: {json.dumps(_clean(header[key]), sort_keys=True)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([format_value(r.get(c)) for c in columns])


def content_key(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, np.ndarray):
            h.update(np.ascontiguousarray(p).tobytes())
        else:
            h.update(repr(p).encode())
        h.update(b"|")
    return h.hexdigest()[:24]


class Cache:
    """Directory cache for arrays keyed by content hash."""

    def __init__(self, root):
        self.root = Path(root) if root else None
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    def path(self, kind, key):
        return self.root / f"{kind}-{key}.bin"

    def load(self, kind, key):
        if self.root is None:
            return None
        p = self.path(kind, key)
        if not p.exists():
            return None
        try:
            return read_field(p)
        except (ValueError, OSError, KeyError):
            return None

    def store(self, kind, key, values, **extra):
        if self.root is None:
            return
        p = self.path(kind, key)
        tmp = p.with_suffix(".tmp")
        write_field(tmp, values, kind, extra.pop("n_axis", 0), dtype="complex128", **extra)
        os.replace(tmp, p)

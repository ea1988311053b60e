"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    b"HSNN" | u16 version | u16 len + kind tag | u32 len + JSON metadata
    u32 block count
    per block: u16 len + name | u8 ndim | ndim * u32 dims | float64 data

Weights round-trip bit-exactly.
"""

import json
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"HSNN"
VERSION = 1


def _put_str(fh, text, width):
    raw = text.encode("utf-8")
    fh.write(struct.pack("<" + width, len(raw)))
    fh.write(raw)


def _get(fh, fmt):
    size = struct.calcsize(fmt)
    raw = fh.read(size)
    if len(raw) != size:
        raise FormatError("checkpoint truncated")
    return struct.unpack(fmt, raw)


def _get_str(fh, width):
    (n,) = _get(fh, "<" + width)
    raw = fh.read(n)
    if len(raw) != n:
        raise FormatError("checkpoint truncated")
    return raw.decode("utf-8")


def save_checkpoint(path, kind, blocks, meta=None):
    """Write named float arrays ``blocks`` (a list of ``(name, array)``)."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        _put_str(fh, kind, "H")
        _put_str(fh, json.dumps(meta or {}, sort_keys=True), "I")
        fh.write(struct.pack("<I", len(blocks)))
        for name, arr in blocks:
            arr = np.ascontiguousarray(arr, dtype="<f8")
            _put_str(fh, name, "H")
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path, expect_kind=None):
    """Return ``(kind, meta, {name: array})``."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise FormatError(f"{path}: not a checkpoint")
        (version,) = _get(fh, "<H")
        if version != VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        kind = _get_str(fh, "H")
        if expect_kind is not None and kind != expect_kind:
            raise FormatError(f"{path}: expected a {expect_kind!r} checkpoint, found {kind!r}")
        meta = json.loads(_get_str(fh, "I"))
        (count,) = _get(fh, "<I")
        blocks = {}
        for _ in range(count):
            name = _get_str(fh, "H")
            (ndim,) = _get(fh, "<B")
            shape = _get(fh, f"<{ndim}I") if ndim else ()
            n = int(np.prod(shape)) if ndim else 1
            raw = fh.read(8 * n)
            if len(raw) != 8 * n:
                raise FormatError(f"{path}: block {name!r} truncated")
            blocks[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    return kind, meta, blocks

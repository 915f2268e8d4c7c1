"""Binary parameter checkpoints.

Layout (all integers little-endian)::

    b"RGCKPT1"            magic, 7 bytes
    u8                    element width in bytes (4 or 8)
    u32                   parameter count
    then per parameter:
      u32 name length, name (UTF-8)
      u32 ndim, ndim x u32 dims
      u64 data length, raw little-endian data
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"RGCKPT1"
_WIDTHS = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


class CheckpointMismatchError(CheckpointError):
    def __init__(self, name: str, detail: str):
        super().__init__(f"checkpoint does not match architecture at parameter {name}: {detail}")
        self.name = name


def save_checkpoint(params, path) -> None:
    store = params.raw() if hasattr(params, "raw") else params
    widths = {a.dtype.itemsize for a in store.values()}
    if len(widths) != 1 or next(iter(widths)) not in _WIDTHS:
        raise CheckpointError(f"parameters must share one 32- or 64-bit float type, got widths {widths}")
    width = widths.pop()
    dt = _WIDTHS[width]
    parts = [MAGIC, struct.pack("<BI", width, len(store))]
    for name, a in store.items():
        encoded = name.encode("utf-8")
        data = np.ascontiguousarray(a, dtype=dt).tobytes()
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
        parts.append(struct.pack("<Q", len(data)))
        parts.append(data)
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(raw):
            raise CheckpointError(f"{path}: truncated")
        out = struct.unpack_from(fmt, raw, pos)
        pos += size
        return out

    width, count = take("<BI")
    if width not in _WIDTHS:
        raise CheckpointError(f"{path}: unsupported element width {width}")
    dt = _WIDTHS[width]
    out = {}
    for _ in range(count):
        (name_len,) = take("<I")
        name = raw[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = take("<I")
        shape = take(f"<{ndim}I")
        (n_bytes,) = take("<Q")
        if n_bytes != int(np.prod(shape, dtype=np.int64)) * width or pos + n_bytes > len(raw):
            raise CheckpointError(f"{path}: bad data length for {name}")
        out[name] = np.frombuffer(raw, dtype=dt, count=n_bytes // width, offset=pos).reshape(shape).astype(dt.newbyteorder("="))
        pos += n_bytes
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    return out


def load_into(graph, path_or_params) -> None:
    """Copy checkpoint values into every parameter of ``graph``.

    Extra checkpoint entries (e.g. auxiliary branches when ``graph`` was
    stripped) are ignored; missing or misshapen ones raise
    ``CheckpointMismatchError`` naming the first offending parameter.
    """
    loaded = path_or_params if isinstance(path_or_params, dict) else load_checkpoint(path_or_params)
    store = graph.params.raw()
    for name, a in store.items():
        if name not in loaded:
            raise CheckpointMismatchError(name, "missing from checkpoint")
        if loaded[name].shape != a.shape:
            raise CheckpointMismatchError(name, f"shape {loaded[name].shape} != expected {a.shape}")
    for name, a in store.items():
        store[name] = loaded[name].astype(a.dtype, copy=True)

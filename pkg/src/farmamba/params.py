"""Named parameter trees and the FARM binary container.

Layout (little-endian)::

    b"FARM" | version u32 | count u32 |
    per entry: name_len u32 | name utf-8 | rank u32 | extents u64[rank] | payload

Version 1 stores float32 payloads. Version 2 is identical but stores float64,
which is what 64-bit runs need for bit-exact resume.
"""
from __future__ import annotations

import io
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

from .tensor import Tensor

MAGIC = b"FARM"
_PAYLOAD = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


class ParamTree(OrderedDict):
    """Ordered mapping from dotted path to trainable :class:`Tensor`."""

    def __setitem__(self, key, value):
        if key in self:
            raise KeyError(f"duplicate parameter name {key!r}")
        super().__setitem__(key, value)

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data) for k, v in self.items())

    def load_arrays(self, arrays: Mapping[str, np.ndarray], strict: bool = True) -> None:
        """Copy values in place; shapes must match."""
        if strict:
            missing = set(self) - set(arrays)
            if missing:
                raise KeyError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for k, t in self.items():
            if k not in arrays:
                continue
            a = np.asarray(arrays[k])
            if a.shape != t.shape:
                raise ValueError(f"{k}: checkpoint shape {a.shape} != model shape {t.shape}")
            t.data[...] = a


def dumps(entries: Mapping[str, np.ndarray], version: int | None = None) -> bytes:
    if version is None:
        version = 2 if any(np.asarray(a).dtype == np.float64 for a in entries.values()) else 1
    if version not in _PAYLOAD:
        raise ValueError(f"unsupported FARM version {version}")
    dt = _PAYLOAD[version]
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", version, len(entries)))
    for name, arr in entries.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> "OrderedDict[str, np.ndarray]":
    if blob[:4] != MAGIC:
        raise ValueError("not a FARM container (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version not in _PAYLOAD:
        raise ValueError(f"unsupported FARM version {version}")
    dt = _PAYLOAD[version]
    off = 12
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (n,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off : off + n].decode("utf-8")
        off += n
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}Q", blob, off)
        off += 8 * rank
        count_el = int(np.prod(shape)) if rank else 1
        nbytes = count_el * dt.itemsize
        if off + nbytes > len(blob):
            raise ValueError(f"truncated FARM payload for {name!r}")
        out[name] = np.frombuffer(blob, dtype=dt, count=count_el, offset=off).reshape(shape).copy()
        off += nbytes
    if off != len(blob):
        raise ValueError("trailing bytes after FARM entries")
    return out


def save(path, entries: Mapping[str, np.ndarray], version: int | None = None) -> None:
    Path(path).write_bytes(dumps(entries, version))


def load(path) -> "OrderedDict[str, np.ndarray]":
    return loads(Path(path).read_bytes())


def save_tree(path, tree: ParamTree, version: int | None = None) -> None:
    save(path, tree.arrays(), version)


def load_tree(path, dtype=np.float64) -> ParamTree:
    tree = ParamTree()
    for k, a in load(path).items():
        tree[k] = Tensor(a.astype(dtype), requires_grad=True)
    return tree

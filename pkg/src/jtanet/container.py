"""Binary container: JSON header followed by little-endian raw tensor payloads.

Layout::

    offset 0   magic     b"JTAC"
    offset 4   version   uint32 LE
    offset 8   kind      8 ASCII bytes, NUL padded ("ckpt", "featdb", "patches")
    offset 16  hlen      uint64 LE, byte length of the header
    offset 24  header    UTF-8 JSON object, hlen bytes
    ...        payload   tensors back to back, in header order

The header holds the caller's metadata under ``"meta"`` and a ``"tensors"``
list of ``{"name", "dtype", "shape", "offset", "nbytes"}`` entries, where
``offset`` is relative to the first payload byte.  ``dtype`` is a numpy
dtype string with explicit little-endian byte order (e.g. ``"<f8"``).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ContainerError

MAGIC = b"JTAC"
VERSION = 1
_PREFIX = struct.Struct("<4sI8sQ")


def write_container(path, kind: str, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    entries, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob = np.ascontiguousarray(le).tobytes()
        entries.append({
            "name": name,
            "dtype": le.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True).encode()
    kind_b = kind.encode("ascii")
    if len(kind_b) > 8:
        raise ValueError(f"container kind too long: {kind!r}")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, kind_b.ljust(8, b"\0"), len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_container(path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container; returns ``(meta, tensors)``.

    Raises :class:`ContainerError` on a bad magic/version, a kind mismatch
    or a truncated payload.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ContainerError(f"cannot read {path}: {exc}") from exc
    if len(raw) < _PREFIX.size:
        raise ContainerError(f"{path}: truncated prefix ({len(raw)} bytes)")
    magic, version, kind_b, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise ContainerError(f"{path}: not a container (magic {magic!r})")
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported version {version}")
    file_kind = kind_b.rstrip(b"\0").decode("ascii")
    if kind is not None and file_kind != kind:
        raise ContainerError(f"{path}: expected a {kind!r} container, found {file_kind!r}")
    start = _PREFIX.size + hlen
    if len(raw) < start:
        raise ContainerError(f"{path}: truncated header")
    try:
        header = json.loads(raw[_PREFIX.size:start].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: corrupt header: {exc}") from exc
    tensors = {}
    for e in header["tensors"]:
        lo = start + e["offset"]
        hi = lo + e["nbytes"]
        if hi > len(raw):
            raise ContainerError(
                f"{path}: truncated payload for {e['name']!r} (need {hi} bytes, have {len(raw)})"
            )
        arr = np.frombuffer(raw, dtype=np.dtype(e["dtype"]), count=int(np.prod(e["shape"], dtype=np.int64)), offset=lo)
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(arr.dtype.newbyteorder("="))
    return header["meta"], tensors

"""The ``RPKT`` container shared by checkpoints, prompts and datasets.

Layout::

    b"RPKT" | u32 version | u32 header_len | header (UTF-8 JSON) | payload

All integers little-endian. The header lists every array as
``{"name", "shape", "offset"}`` where ``offset`` counts float32 elements into
the payload, which is one contiguous little-endian float32 buffer.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"RPKT"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


def write(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    entries = []
    offset = 0
    chunks = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size
        chunks.append(a.tobytes())
    header = {"kind": kind, "meta": meta, "arrays": entries, "payload_len": offset}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(Path(path), "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(hbytes)))
        fh.write(hbytes)
        for c in chunks:
            fh.write(c)


def read(path, kind: str | None = None):
    """Return ``(meta, arrays)``; raises :class:`FormatError` on any structural defect."""
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise FormatError(f"{path}: truncated container prefix")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    body = raw[_PREFIX.size:]
    if len(body) < hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(body[:hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from exc
    if kind is not None and header.get("kind") != kind:
        raise FormatError(f"{path}: expected record kind {kind!r}, found {header.get('kind')!r}")
    payload = body[hlen:]
    n = header.get("payload_len")
    if not isinstance(n, int) or len(payload) != 4 * n:
        raise FormatError(f"{path}: payload length {len(payload)} bytes does not match header")
    flat = np.frombuffer(payload, dtype="<f4")
    arrays = {}
    for e in header["arrays"]:
        size = int(np.prod(e["shape"], dtype=np.int64))
        start = e["offset"]
        if start < 0 or start + size > n:
            raise FormatError(f"{path}: array {e['name']!r} lies outside the payload")
        arrays[e["name"]] = flat[start:start + size].reshape(e["shape"]).astype(np.float32)
    return header["meta"], arrays

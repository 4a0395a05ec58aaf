"""Versioned binary container for index files.

Layout (little endian)::

    b"GSIX" | u16 version | u32 header_len | header JSON | segment bytes ...

The header carries the index kind, artifact metadata and a segment table
(``name``, ``offset``, ``length``, ``crc32``; offsets relative to the end of
the header). A segment is ``u32 meta_len | meta JSON | raw array bytes`` where
the meta JSON locates each named array inside the raw block.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatError, VersionMismatch

MAGIC = b"GSIX"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sHI")
_U32 = struct.Struct("<I")


def _encode_segment(meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    specs, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        specs.append({"name": name, "dtype": arr.dtype.str.lstrip("<>|="), "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    head = json.dumps({"meta": meta, "arrays": specs}, sort_keys=True).encode("utf-8")
    return _U32.pack(len(head)) + head + b"".join(blobs)


def _decode_segment(buf: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    (hlen,) = _U32.unpack_from(buf, 0)
    head = json.loads(buf[4:4 + hlen].decode("utf-8"))
    raw = memoryview(buf)[4 + hlen:]
    arrays = {}
    for entry in head["arrays"]:
        start, end = entry["offset"], entry["offset"] + entry["nbytes"]
        if end > len(raw):
            raise FormatError(f"segment array {entry['name']!r} is truncated")
        dt = np.dtype("<" + entry["dtype"]) if entry["dtype"][0] in "fiuc" else np.dtype(entry["dtype"])
        arrays[entry["name"]] = np.frombuffer(raw[start:end], dtype=dt).reshape(entry["shape"]).copy()
    return head["meta"], arrays


def write_container(path: str | Path, kind: str, meta: dict,
                    segments: dict[str, tuple[dict, dict[str, np.ndarray]]]) -> None:
    encoded, table, offset = [], [], 0
    for name, (seg_meta, arrays) in segments.items():
        blob = _encode_segment(seg_meta, arrays)
        table.append({"name": name, "offset": offset, "length": len(blob), "crc32": zlib.crc32(blob)})
        encoded.append(blob)
        offset += len(blob)
    header = json.dumps({"kind": kind, "meta": meta, "segments": table}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)))
        fh.write(header)
        for blob in encoded:
            fh.write(blob)


def read_container(path: str | Path, kind: str) -> tuple[dict, dict[str, tuple[dict, dict[str, np.ndarray]]]]:
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise FormatError(f"{path}: file too short for an index header")
    magic, version, hlen = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: not an index file (bad magic)")
    if version != FORMAT_VERSION:
        raise VersionMismatch(FORMAT_VERSION, version)
    body_start = _PREFIX.size + hlen
    if body_start > len(data):
        raise FormatError(f"{path}: header is truncated")
    try:
        header = json.loads(data[_PREFIX.size:body_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from None
    if header.get("kind") != kind:
        raise FormatError(f"{path}: expected a {kind!r} index, found {header.get('kind')!r}")
    segments = {}
    for entry in header["segments"]:
        start = body_start + entry["offset"]
        blob = data[start:start + entry["length"]]
        if len(blob) != entry["length"]:
            raise FormatError(f"{path}: segment {entry['name']!r} is truncated")
        if zlib.crc32(blob) != entry["crc32"]:
            raise FormatError(f"{path}: segment {entry['name']!r} failed its checksum")
        segments[entry["name"]] = _decode_segment(blob)
    return header["meta"], segments


def pack_strings(items: list[str]) -> dict[str, np.ndarray]:
    raw = [s.encode("utf-8") for s in items]
    offsets = np.zeros(len(raw) + 1, dtype=np.int64)
    if raw:
        offsets[1:] = np.cumsum([len(r) for r in raw])
    return {"bytes": np.frombuffer(b"".join(raw), dtype=np.uint8), "offsets": offsets}


def unpack_strings(blob: np.ndarray, offsets: np.ndarray) -> list[str]:
    buf = blob.tobytes()
    return [buf[offsets[i]:offsets[i + 1]].decode("utf-8") for i in range(len(offsets) - 1)]

"""Dense-array container (.dna) with a fixed, language-neutral byte layout.

Layout:
    bytes 0..7    magic b"DNARRAY\\x00"
    bytes 8..11   format version, uint32 little-endian (currently 1)
    bytes 12..15  metadata length in bytes, uint32 little-endian
    bytes 16..63  reserved, must be zero
    bytes 64..    metadata: canonical JSON {"dims": [...], "dtype": "...",
                  "layout": "row-major"}, sorted keys, no whitespace
    after that    payload: raw element bytes, little-endian, row-major

Supported dtypes: float32, float64, uint8.  Writing is deterministic, so
equal arrays produce byte-identical files.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import FormatError, UnsupportedDtypeError, ValidationError

MAGIC = b"DNARRAY\x00"
VERSION = 1
_HEADER_LEN = 64

_DTYPES = {
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
    "uint8": np.dtype("u1"),
}
_NAMES = {np.dtype(np.float32): "float32", np.dtype(np.float64): "float64",
          np.dtype(np.uint8): "uint8"}


def array_bytes(array):
    """Serialize an ndarray to container bytes."""
    array = np.asarray(array)
    name = _NAMES.get(array.dtype)
    if name is None:
        raise UnsupportedDtypeError(f"dtype {array.dtype} not supported; use float32, float64, or uint8")
    meta = json.dumps({"dims": [int(d) for d in array.shape], "dtype": name,
                       "layout": "row-major"}, sort_keys=True, separators=(",", ":")).encode("ascii")
    header = MAGIC + VERSION.to_bytes(4, "little") + len(meta).to_bytes(4, "little")
    header += bytes(_HEADER_LEN - len(header))
    payload = np.ascontiguousarray(array, dtype=_DTYPES[name]).tobytes()
    return header + meta + payload


def parse_array(blob, offset=0):
    """Parse one container from ``blob`` at ``offset``; returns (array, end offset)."""
    header = blob[offset:offset + _HEADER_LEN]
    if len(header) < _HEADER_LEN:
        raise FormatError("truncated header", offset=offset + len(header))
    if header[:8] != MAGIC:
        raise FormatError("bad magic", offset=offset)
    version = int.from_bytes(header[8:12], "little")
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}", offset=offset + 8)
    if any(header[16:]):
        raise FormatError("reserved header bytes not zero", offset=offset + 16)
    meta_len = int.from_bytes(header[12:16], "little")
    meta_start = offset + _HEADER_LEN
    meta_raw = blob[meta_start:meta_start + meta_len]
    if len(meta_raw) < meta_len:
        raise FormatError("truncated metadata", offset=meta_start + len(meta_raw))
    try:
        meta = json.loads(meta_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"metadata is not valid JSON: {exc}", offset=meta_start) from exc
    if not isinstance(meta, dict) or set(meta) != {"dims", "dtype", "layout"}:
        raise FormatError("metadata must have exactly the keys dims, dtype, layout", offset=meta_start)
    if meta["layout"] != "row-major":
        raise FormatError(f"unsupported layout {meta['layout']!r}", offset=meta_start)
    dtype = _DTYPES.get(meta["dtype"])
    if dtype is None:
        raise UnsupportedDtypeError(f"dtype {meta['dtype']!r} not supported", offset=meta_start)
    dims = meta["dims"]
    if (not isinstance(dims, list)
            or any(not isinstance(d, int) or isinstance(d, bool) or d < 0 for d in dims)):
        raise FormatError(f"dims must be a list of non-negative integers, got {dims!r}", offset=meta_start)
    count = int(np.prod(dims, dtype=np.int64)) if dims else 1
    payload_start = meta_start + meta_len
    payload_len = count * dtype.itemsize
    payload = blob[payload_start:payload_start + payload_len]
    if len(payload) < payload_len:
        raise FormatError("truncated payload", offset=payload_start + len(payload))
    array = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
    return array, payload_start + payload_len


def save_array(path, array):
    """Write one array to ``path`` in container format."""
    with open(path, "wb") as fh:
        fh.write(array_bytes(array))


def load_array(path):
    """Read one array from ``path``; trailing bytes are rejected."""
    with open(path, "rb") as fh:
        blob = fh.read()
    array, end = parse_array(blob)
    if end != len(blob):
        raise FormatError(f"{len(blob) - end} trailing bytes after payload", offset=end)
    return array


def validate_dims(array, expected, what):
    """Shape guard shared by readers of specific file kinds."""
    if tuple(array.shape) != tuple(expected):
        raise ValidationError(f"{what}: expected shape {tuple(expected)}, got {array.shape}")
    return array

"""Flat binary container: a JSON header plus little-endian float64 payload.

Layout: 4-byte magic ``GMX1``, little-endian uint32 header length, the UTF-8
JSON header, then the row-major payload.  Headers are serialized canonically
(sorted keys, fixed separators), so write -> read -> write round-trips to
identical bytes.
"""

import json
import struct

import numpy as np

from .errors import FormatError

__all__ = ["write_array", "read_array"]

_MAGIC = b"GMX1"


def _header_bytes(shape, role, seed, extra=None):
    header = {
        "dtype": "f64le",
        "order": "row-major",
        "role": str(role),
        "seed": int(seed),
        "shape": [int(s) for s in shape],
    }
    if extra:
        for key, value in extra.items():
            if key in header:
                raise FormatError(f"reserved header field: {key}")
            header[key] = value
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_array(path, array, role, seed, extra=None):
    """Write ``array`` with its describing header to ``path``."""
    array = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    head = _header_bytes(array.shape, role, seed, extra)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(array.tobytes(order="C"))


def read_array(path):
    """Read a container; returns (array, header dict).

    Raises FormatError carrying the byte offset of the first inconsistency.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise FormatError("bad magic; not a gmixpost container", offset=0)
    if len(blob) < 8:
        raise FormatError("truncated header length field", offset=4)
    (head_len,) = struct.unpack("<I", blob[4:8])
    head_end = 8 + head_len
    if len(blob) < head_end:
        raise FormatError("truncated JSON header", offset=len(blob))
    try:
        header = json.loads(blob[8:head_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unparseable header: {exc}", offset=8) from exc
    for key in ("dtype", "order", "role", "seed", "shape"):
        if key not in header:
            raise FormatError(f"header missing field {key!r}", offset=8)
    if header["dtype"] != "f64le" or header["order"] != "row-major":
        raise FormatError("unsupported dtype/order", offset=8)
    shape = tuple(int(s) for s in header["shape"])
    expected = int(np.prod(shape, dtype=np.int64)) * 8
    payload = blob[head_end:]
    if len(payload) != expected:
        raise FormatError(
            f"payload has {len(payload)} bytes, expected {expected}",
            offset=head_end + min(len(payload), expected),
        )
    array = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    return array, header

"""Flat binary tensor container used to exchange arrays with backends.

Layout: an 8-byte magic ``TNSR0001``, a little-endian uint32 header
length, a JSON header ``{"dtype": "f32", "order": "row-major", "shape":
[...]}`` and the raw float32 little-endian payload in C order. Reading
back what was written returns a bit-identical array.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import BadMagic, HeaderMismatch, TruncatedData

MAGIC = b"TNSR0001"
_DTYPE = np.dtype("<f4")


def write_tensor(path, array: np.ndarray) -> None:
    """Write an array as float32; integer and float inputs are cast."""
    # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d.
    # tobytes() below serializes in C order whatever the memory layout.
    arr = np.asarray(array, dtype=_DTYPE)
    header = json.dumps(
        {"dtype": "f32", "order": "row-major", "shape": list(arr.shape)},
        separators=(",", ":"),
    ).encode("ascii")
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(struct.pack("<I", len(header)))
        handle.write(header)
        handle.write(arr.tobytes())


def read_tensor(path) -> np.ndarray:
    """Read a tensor file, validating magic, header and payload size."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise BadMagic(f"{path}: not a tensor container")
    if len(data) < len(MAGIC) + 4:
        raise TruncatedData(f"{path}: missing header length")
    (header_len,) = struct.unpack_from("<I", data, len(MAGIC))
    header_end = len(MAGIC) + 4 + header_len
    if len(data) < header_end:
        raise TruncatedData(f"{path}: header shorter than declared")
    try:
        header = json.loads(data[len(MAGIC) + 4 : header_end].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderMismatch(f"{path}: unparseable header: {exc}") from exc
    if not isinstance(header, dict):
        raise HeaderMismatch(f"{path}: header must be a JSON object")
    if header.get("dtype") != "f32" or header.get("order") != "row-major":
        raise HeaderMismatch(f"{path}: unsupported dtype or order in {header}")
    shape = header.get("shape")
    if (
        not isinstance(shape, list)
        or any(not isinstance(s, int) or s < 0 for s in shape)
    ):
        raise HeaderMismatch(f"{path}: bad shape {shape!r}")

    count = 1
    for s in shape:
        count *= s
    payload = data[header_end:]
    if len(payload) < count * 4:
        raise TruncatedData(
            f"{path}: payload holds {len(payload)} bytes, expected {count * 4}"
        )
    if len(payload) > count * 4:
        raise HeaderMismatch(
            f"{path}: payload holds {len(payload)} bytes, header declares {count * 4}"
        )
    # tuple() so scalar tensors (shape []) reshape to 0-d, not length-1.
    return np.frombuffer(payload, dtype=_DTYPE).reshape(tuple(shape)).copy()

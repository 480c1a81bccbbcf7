"""Minimal DICOM reading and writing for sagittal MRI series.

This is not a general DICOM implementation. It reads the one shape of
file the pipeline consumes - single-frame little-endian grayscale slices,
either explicit or implicit VR, with or without the 128-byte preamble -
and writes one canonical shape: explicit VR little endian with preamble,
a minimal meta group and the dataset tags this package itself parses, in
ascending tag order. Canonical writing makes byte-identical round trips
possible, which the tests rely on.

Coordinate conventions: a slice is (rows, cols) with pixel spacing in
millimetres per (row, col) step. The scan direction position of a slice
is taken from the first component of ImagePositionPatient, falling back
to InstanceNumber read as a real; for the sagittal series this package
handles, that is the left-right coordinate.
"""

import dataclasses
import math
import struct
import warnings
from typing import Sequence

import numpy as np

from .errors import (
    DicomError,
    EmptySeries,
    InconsistentGeometry,
    MissingTag,
    TruncatedPixelData,
    UnsupportedTransferSyntax,
)

TRANSFER_SYNTAX_IMPLICIT = "1.2.840.10008.1.2"
TRANSFER_SYNTAX_EXPLICIT = "1.2.840.10008.1.2.1"

TAG_TRANSFER_SYNTAX = (0x0002, 0x0010)
TAG_INSTANCE_NUMBER = (0x0020, 0x0013)
TAG_IMAGE_POSITION = (0x0020, 0x0032)
TAG_ROWS = (0x0028, 0x0010)
TAG_COLS = (0x0028, 0x0011)
TAG_PIXEL_SPACING = (0x0028, 0x0030)
TAG_BITS_ALLOCATED = (0x0028, 0x0100)
TAG_RESCALE_INTERCEPT = (0x0028, 0x1052)
TAG_RESCALE_SLOPE = (0x0028, 0x1053)
TAG_PIXEL_DATA = (0x7FE0, 0x0010)

# VRs that use the 4-byte length form (with 2 reserved bytes) in explicit
# little endian encoding.
_LONG_VRS = {b"OB", b"OW", b"OF", b"OD", b"OL", b"SQ", b"UC", b"UR", b"UT", b"UN"}
_KNOWN_VRS = _LONG_VRS | {
    b"AE", b"AS", b"AT", b"CS", b"DA", b"DS", b"DT", b"FL", b"FD", b"IS",
    b"LO", b"LT", b"PN", b"SH", b"SL", b"SS", b"ST", b"TM", b"UI", b"UL", b"US",
}

_UNDEFINED_LENGTH = 0xFFFFFFFF


@dataclasses.dataclass
class SliceRecord:
    """One parsed slice.

    ``pixels`` is (rows, cols) float64 after rescale slope / intercept
    have been applied. ``pixel_spacing`` is (row_mm, col_mm).
    ``slice_position`` is the scan-direction coordinate in millimetres.
    """

    rows: int
    cols: int
    pixel_spacing: tuple[float, float]
    slice_position: float
    pixels: np.ndarray
    instance_number: int | None = None
    bits_allocated: int = 16

    def __eq__(self, other):
        if not isinstance(other, SliceRecord):
            return NotImplemented
        return (
            self.rows == other.rows
            and self.cols == other.cols
            and self.pixel_spacing == other.pixel_spacing
            and self.slice_position == other.slice_position
            and self.instance_number == other.instance_number
            and self.bits_allocated == other.bits_allocated
            and np.array_equal(self.pixels, other.pixels)
        )


@dataclasses.dataclass
class Volume:
    """A slice stack: ``data`` is (slices, rows, cols) float64.

    ``spacing`` is millimetres per step along (slice, row, col);
    the slice spacing is zero for single-slice volumes.
    """

    data: np.ndarray
    spacing: tuple[float, float, float]
    slice_positions: tuple[float, ...]


class _Reader:
    """Sequential little-endian element reader over one byte string."""

    def __init__(self, data: bytes, offset: int, explicit: bool):
        self.data = data
        self.pos = offset
        self.explicit = explicit

    def at_end(self) -> bool:
        return self.pos >= len(self.data)

    def peek_group(self) -> int:
        if self.pos + 2 > len(self.data):
            raise TruncatedPixelData("file ends inside an element header")
        return struct.unpack_from("<H", self.data, self.pos)[0]

    def next_element(self) -> tuple[tuple[int, int], bytes, bytes]:
        """Return ((group, element), vr, raw value bytes).

        In implicit VR files the returned vr is ``b""``.
        """
        data, pos = self.data, self.pos
        if pos + 8 > len(data):
            raise TruncatedPixelData("file ends inside an element header")
        group, element = struct.unpack_from("<HH", data, pos)
        pos += 4
        if self.explicit:
            vr = data[pos : pos + 2]
            if vr not in _KNOWN_VRS:
                raise DicomError(
                    f"unknown VR {vr!r} at offset {pos} in explicit VR stream"
                )
            pos += 2
            if vr in _LONG_VRS:
                if pos + 6 > len(data):
                    raise TruncatedPixelData("file ends inside an element header")
                length = struct.unpack_from("<I", data, pos + 2)[0]
                pos += 6
            else:
                length = struct.unpack_from("<H", data, pos)[0]
                pos += 2
        else:
            vr = b""
            length = struct.unpack_from("<I", data, pos)[0]
            pos += 4
        if length == _UNDEFINED_LENGTH:
            raise UnsupportedTransferSyntax(
                "undefined element lengths (encapsulated data) are not supported"
            )
        if pos + length > len(data):
            raise TruncatedPixelData(
                f"element ({group:04X},{element:04X}) declares {length} bytes "
                f"but only {len(data) - pos} remain"
            )
        value = data[pos : pos + length]
        self.pos = pos + length
        return (group, element), vr, value


def _sniff_explicit(data: bytes, offset: int) -> bool:
    # Bytes 4:6 of the first element are a VR in explicit files and the
    # low half of a 32-bit length in implicit ones.
    return data[offset + 4 : offset + 6] in _KNOWN_VRS


def _decode_string(value: bytes) -> str:
    return value.decode("ascii").rstrip("\x00 ")


def _decode_ds(value: bytes) -> list[float]:
    text = _decode_string(value)
    if not text:
        return []
    return [float(part) for part in text.split("\\")]


def _decode_us(value: bytes, tag) -> int:
    if len(value) < 2:
        raise DicomError(f"tag ({tag[0]:04X},{tag[1]:04X}) too short for US")
    return struct.unpack_from("<H", value, 0)[0]


def parse_dicom_file(data: bytes) -> SliceRecord:
    """Parse one slice from raw file bytes.

    Accepts preamble-plus-``DICM`` files and bare datasets; accepts
    explicit and implicit VR little endian. Raises
    :class:`UnsupportedTransferSyntax` for anything else,
    :class:`MissingTag` when a required attribute is absent and
    :class:`TruncatedPixelData` when the pixel payload (or the file
    itself) is shorter than declared.
    """
    if len(data) >= 132 and data[128:132] == b"DICM":
        reader = _Reader(data, 132, explicit=True)
        syntax = TRANSFER_SYNTAX_EXPLICIT
        # File meta group: always explicit VR; its elements carry group 0002.
        while not reader.at_end() and reader.peek_group() == 0x0002:
            tag, _, value = reader.next_element()
            if tag == TAG_TRANSFER_SYNTAX:
                syntax = _decode_string(value)
        if syntax == TRANSFER_SYNTAX_EXPLICIT:
            explicit = True
        elif syntax == TRANSFER_SYNTAX_IMPLICIT:
            explicit = False
        else:
            raise UnsupportedTransferSyntax(f"transfer syntax {syntax!r}")
        reader = _Reader(data, reader.pos, explicit=explicit)
    else:
        if len(data) < 8:
            raise DicomError("file too short to contain a DICOM dataset")
        reader = _Reader(data, 0, explicit=_sniff_explicit(data, 0))

    values: dict[tuple[int, int], bytes] = {}
    while not reader.at_end():
        tag, _, value = reader.next_element()
        values[tag] = value

    for tag in (TAG_ROWS, TAG_COLS, TAG_PIXEL_SPACING, TAG_PIXEL_DATA):
        if tag not in values:
            raise MissingTag(tag)

    rows = _decode_us(values[TAG_ROWS], TAG_ROWS)
    cols = _decode_us(values[TAG_COLS], TAG_COLS)
    if rows < 1 or cols < 1:
        raise DicomError("image dimensions must be positive")
    spacing = _decode_ds(values[TAG_PIXEL_SPACING])
    if len(spacing) != 2 or min(spacing) <= 0.0:
        raise DicomError("PixelSpacing must hold two positive values")

    instance_number: int | None = None
    if TAG_INSTANCE_NUMBER in values:
        text = _decode_string(values[TAG_INSTANCE_NUMBER])
        if text:
            instance_number = int(text)

    if TAG_IMAGE_POSITION in values:
        position = _decode_ds(values[TAG_IMAGE_POSITION])
        if not position:
            raise DicomError("ImagePositionPatient is empty")
        slice_position = position[0]
    elif instance_number is not None:
        slice_position = float(instance_number)
    else:
        raise MissingTag(TAG_IMAGE_POSITION, "no slice position source present")

    bits = 16
    if TAG_BITS_ALLOCATED in values:
        bits = _decode_us(values[TAG_BITS_ALLOCATED], TAG_BITS_ALLOCATED)
    if bits not in (8, 16):
        raise UnsupportedTransferSyntax(f"BitsAllocated {bits} is not supported")

    slope = 1.0
    intercept = 0.0
    if TAG_RESCALE_SLOPE in values:
        slope = _decode_ds(values[TAG_RESCALE_SLOPE])[0]
    if TAG_RESCALE_INTERCEPT in values:
        intercept = _decode_ds(values[TAG_RESCALE_INTERCEPT])[0]

    raw = values[TAG_PIXEL_DATA]
    expected = rows * cols * (bits // 8)
    if len(raw) < expected:
        raise TruncatedPixelData(
            f"pixel data holds {len(raw)} bytes, expected {expected}"
        )
    # Trailing padding beyond the expected payload is tolerated.
    dtype = np.uint8 if bits == 8 else np.dtype("<u2")
    pixels = np.frombuffer(raw[:expected], dtype=dtype).reshape(rows, cols)
    pixels = pixels.astype(np.float64) * slope + intercept

    return SliceRecord(
        rows=rows,
        cols=cols,
        pixel_spacing=(spacing[0], spacing[1]),
        slice_position=slice_position,
        pixels=pixels,
        instance_number=instance_number,
        bits_allocated=bits,
    )


def _format_ds(value: float) -> str:
    if not math.isfinite(value):
        raise ValueError("DS values must be finite")
    text = repr(float(value))
    if text.endswith(".0"):
        text = text[:-2]
    if len(text) > 16:
        raise ValueError(f"value {value!r} needs more than 16 DS characters")
    return text


def _element(tag: tuple[int, int], vr: bytes, value: bytes) -> bytes:
    if len(value) % 2:
        value += b"\x00" if vr in (b"UI", b"OB", b"OW") else b" "
    head = struct.pack("<HH", tag[0], tag[1])
    if vr in _LONG_VRS:
        return head + vr + b"\x00\x00" + struct.pack("<I", len(value)) + value
    return head + vr + struct.pack("<H", len(value)) + value


def write_dicom(record: SliceRecord) -> bytes:
    """Serialize a slice record to canonical explicit VR little endian.

    Pixels must be non-negative integers representable in the record's
    ``bits_allocated``; rescale tags are never written. Parsing the
    output recovers an equal record, and re-serializing that parse is
    byte-identical.
    """
    pixels = np.asarray(record.pixels)
    if pixels.shape != (record.rows, record.cols):
        raise ValueError(
            f"pixels shape {pixels.shape} disagrees with "
            f"({record.rows}, {record.cols})"
        )
    if record.bits_allocated not in (8, 16):
        raise ValueError("bits_allocated must be 8 or 16")
    rounded = np.rint(pixels)
    if not np.array_equal(rounded, pixels):
        raise ValueError("pixels must be integer-valued for canonical writing")
    limit = 1 << record.bits_allocated
    if (rounded < 0).any() or (rounded >= limit).any():
        raise ValueError(f"pixels must lie in [0, {limit})")
    dtype = np.uint8 if record.bits_allocated == 8 else np.dtype("<u2")
    payload = rounded.astype(dtype).tobytes()

    body = bytearray()
    if record.instance_number is not None:
        body += _element(
            TAG_INSTANCE_NUMBER, b"IS", str(int(record.instance_number)).encode()
        )
    position = "\\".join(
        [_format_ds(record.slice_position), "0", "0"]
    )
    body += _element(TAG_IMAGE_POSITION, b"DS", position.encode())
    body += _element(TAG_ROWS, b"US", struct.pack("<H", record.rows))
    body += _element(TAG_COLS, b"US", struct.pack("<H", record.cols))
    spacing = "\\".join(_format_ds(s) for s in record.pixel_spacing)
    body += _element(TAG_PIXEL_SPACING, b"DS", spacing.encode())
    body += _element(TAG_BITS_ALLOCATED, b"US", struct.pack("<H", record.bits_allocated))
    body += _element(TAG_PIXEL_DATA, b"OW", payload)

    syntax_element = _element(TAG_TRANSFER_SYNTAX, b"UI", TRANSFER_SYNTAX_EXPLICIT.encode())
    meta = _element((0x0002, 0x0000), b"UL", struct.pack("<I", len(syntax_element)))
    meta += syntax_element
    return b"\x00" * 128 + b"DICM" + bytes(meta) + bytes(body)


def assemble_volume(records: Sequence[SliceRecord]) -> Volume:
    """Stack slice records into a geometry-checked volume.

    Slices are ordered by position, breaking ties by instance number and
    then input order. All slices must agree on shape and pixel spacing
    within 1e-6. The slice spacing is the median gap between consecutive
    positions; duplicate positions are tolerated with a warning.
    """
    records = list(records)
    if not records:
        raise EmptySeries("no slices to assemble")
    first = records[0]
    for rec in records[1:]:
        if (rec.rows, rec.cols) != (first.rows, first.cols):
            raise InconsistentGeometry(
                f"slice shape ({rec.rows}, {rec.cols}) != "
                f"({first.rows}, {first.cols})"
            )
        if (
            abs(rec.pixel_spacing[0] - first.pixel_spacing[0]) > 1e-6
            or abs(rec.pixel_spacing[1] - first.pixel_spacing[1]) > 1e-6
        ):
            raise InconsistentGeometry("pixel spacing differs between slices")

    order = sorted(
        range(len(records)),
        key=lambda i: (
            records[i].slice_position,
            records[i].instance_number if records[i].instance_number is not None else 1 << 31,
            i,
        ),
    )
    positions = [records[i].slice_position for i in order]
    gaps = np.diff(positions)
    if len(gaps) and (gaps == 0.0).any():
        warnings.warn("duplicate slice positions in series", stacklevel=2)
    slice_spacing = float(np.median(gaps)) if len(gaps) else 0.0

    data = np.stack([records[i].pixels for i in order]).astype(np.float64)
    return Volume(
        data=data,
        spacing=(slice_spacing, first.pixel_spacing[0], first.pixel_spacing[1]),
        slice_positions=tuple(positions),
    )

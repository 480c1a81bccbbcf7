"""Exception hierarchy shared across the pipeline.

Every error raised deliberately by this package derives from
:class:`SpineError`, so callers can catch one type at the boundary.
I/O failures from the operating system are left as the builtin
:class:`OSError`.
"""


class SpineError(Exception):
    """Base class for all pipeline errors."""


class DicomError(SpineError):
    """Malformed or unsupported DICOM input."""


class MissingTag(DicomError):
    """A tag required by the pipeline is absent from the dataset."""

    def __init__(self, tag: tuple[int, int], note: str = ""):
        self.tag = tag
        msg = f"required DICOM tag ({tag[0]:04X},{tag[1]:04X}) is missing"
        if note:
            msg = f"{msg}: {note}"
        super().__init__(msg)


class UnsupportedTransferSyntax(DicomError):
    """Encapsulated / compressed pixel data or non little-endian encoding."""


class TruncatedPixelData(DicomError):
    """PixelData element is shorter than rows * cols * bytes-per-sample."""


class InconsistentGeometry(DicomError):
    """Slices of one series disagree on shape or pixel spacing."""


class EmptySeries(DicomError):
    """A series with zero usable slices cannot form a volume."""


class InvalidOverlap(SpineError):
    """Patch overlap fraction outside the half-open interval [0, 1)."""


class ChannelMismatch(SpineError):
    """Patch outputs with inconsistent channel counts cannot be stitched."""


class ShapeMismatch(SpineError):
    """An array does not have the shape required by the operation."""


class OutOfBounds(SpineError):
    """An annotation point lies outside the target image."""


class OutOfRange(SpineError):
    """A height interval lies outside the scan's row range."""


class ZeroArea(SpineError):
    """A polygon too degenerate for an overlap ratio to be defined."""


class EmptyDetection(SpineError):
    """A 3D instance with no polygons cannot be processed further."""


class NoDetections(SpineError):
    """Sequence decoding needs at least one detected instance."""


class NoSharedSlices(SpineError):
    """Two instances share no sagittal slice, so no volume lies between them."""


class NoGradablePairs(SpineError):
    """None of the gradable level pairs is present in the report."""


class BackendFailure(SpineError):
    """A model backend failed or violated its output contract."""


class ConfigError(SpineError):
    """Invalid configuration file or unknown configuration key."""


class TensorFormatError(SpineError):
    """Base class for tensor container format errors."""


class BadMagic(TensorFormatError):
    """The file does not start with the tensor container magic."""


class HeaderMismatch(TensorFormatError):
    """Tensor header is unparseable or disagrees with the payload."""


class TruncatedData(TensorFormatError):
    """Tensor payload or header is shorter than declared."""

"""Report data model and CSV/JSON serialization.

Every float stored in a report is rounded to nine significant digits at
construction time. JSON output therefore never needs more than nine
significant digits, and reading a written JSON report reproduces the
in-memory report exactly, field for field.

JSON layout: one object with ``vertebrae`` and ``ivvs`` arrays. CSV
output writes two files, ``<stem>_vertebrae.csv`` and ``<stem>_ivvs.csv``
next to the requested path; column orders are fixed and documented in
:data:`VERTEBRA_COLUMNS` and :func:`ivv_columns`.
"""

import csv
import dataclasses
import json
from pathlib import Path

# Grading groups in storage order; flattening them yields the 29-value
# vector used by file backends. ccs_binary is derived, not stored.
GRADING_GROUPS = (
    ("pfirrmann", 5),
    ("disc_narrowing", 4),
    ("ccs_multiclass", 4),
    ("endplate_upper", 2),
    ("endplate_lower", 2),
    ("marrow_upper", 2),
    ("marrow_lower", 2),
    ("foraminal_left", 2),
    ("foraminal_right", 2),
    ("spondylolisthesis", 2),
    ("herniation", 2),
)
GRADING_VECTOR_LENGTH = sum(size for _, size in GRADING_GROUPS)

_SUM_TOL = 1e-6


def round9(value: float) -> float:
    """Round to nine significant digits (report storage precision)."""
    return float(f"{float(value):.9g}")


def _round_tuple(values) -> tuple[float, ...]:
    return tuple(round9(v) for v in values)


@dataclasses.dataclass(frozen=True)
class GradingScores:
    """Per-IVV grading probabilities, one tuple per scheme.

    ``ccs_binary`` is derived from the multiclass central canal stenosis
    probabilities by keeping class 1 and pooling classes 2-4.
    """

    pfirrmann: tuple[float, ...]
    disc_narrowing: tuple[float, ...]
    ccs_multiclass: tuple[float, ...]
    endplate_upper: tuple[float, ...]
    endplate_lower: tuple[float, ...]
    marrow_upper: tuple[float, ...]
    marrow_lower: tuple[float, ...]
    foraminal_left: tuple[float, ...]
    foraminal_right: tuple[float, ...]
    spondylolisthesis: tuple[float, ...]
    herniation: tuple[float, ...]
    ccs_binary: tuple[float, ...] = dataclasses.field(init=False)

    def __post_init__(self):
        for name, size in GRADING_GROUPS:
            probs = _round_tuple(getattr(self, name))
            if len(probs) != size:
                raise ValueError(f"{name} needs {size} probabilities, got {len(probs)}")
            if any(p < 0.0 for p in probs):
                raise ValueError(f"{name} holds a negative probability")
            if abs(sum(probs) - 1.0) > _SUM_TOL:
                raise ValueError(f"{name} probabilities sum to {sum(probs)}, not 1")
            object.__setattr__(self, name, probs)
        ccs = self.ccs_multiclass
        object.__setattr__(
            self, "ccs_binary", (round9(ccs[0]), round9(ccs[1] + ccs[2] + ccs[3]))
        )

    @classmethod
    def uniform(cls) -> "GradingScores":
        return cls(
            **{
                name: tuple(1.0 / size for _ in range(size))
                for name, size in GRADING_GROUPS
            }
        )

    @classmethod
    def from_vector(cls, vector) -> "GradingScores":
        """Build from the flat 29-value concatenation of all groups."""
        values = [float(v) for v in vector]
        if len(values) != GRADING_VECTOR_LENGTH:
            raise ValueError(
                f"grading vector needs {GRADING_VECTOR_LENGTH} values, got {len(values)}"
            )
        fields = {}
        offset = 0
        for name, size in GRADING_GROUPS:
            fields[name] = tuple(values[offset : offset + size])
            offset += size
        return cls(**fields)

    def to_vector(self) -> tuple[float, ...]:
        out: tuple[float, ...] = ()
        for name, _ in GRADING_GROUPS:
            out += getattr(self, name)
        return out

    def to_json_dict(self) -> dict:
        d = {name: list(getattr(self, name)) for name, _ in GRADING_GROUPS}
        d["ccs_binary"] = list(self.ccs_binary)
        return d

    @classmethod
    def from_json_dict(cls, data: dict) -> "GradingScores":
        return cls(**{name: tuple(data[name]) for name, _ in GRADING_GROUPS})


@dataclasses.dataclass(frozen=True)
class PolygonRecord:
    """One per-slice quadrilateral: corners, centroid and score."""

    slice_index: int
    tl: tuple[float, float]
    tr: tuple[float, float]
    br: tuple[float, float]
    bl: tuple[float, float]
    centroid: tuple[float, float]
    score: float

    def __post_init__(self):
        object.__setattr__(self, "slice_index", int(self.slice_index))
        for name in ("tl", "tr", "br", "bl", "centroid"):
            object.__setattr__(self, name, _round_tuple(getattr(self, name)))
        object.__setattr__(self, "score", round9(self.score))

    def to_json_dict(self) -> dict:
        return {
            "slice": self.slice_index,
            "tl": list(self.tl),
            "tr": list(self.tr),
            "br": list(self.br),
            "bl": list(self.bl),
            "centroid": list(self.centroid),
            "score": self.score,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "PolygonRecord":
        return cls(
            slice_index=data["slice"],
            tl=tuple(data["tl"]),
            tr=tuple(data["tr"]),
            br=tuple(data["br"]),
            bl=tuple(data["bl"]),
            centroid=tuple(data["centroid"]),
            score=data["score"],
        )


@dataclasses.dataclass(frozen=True)
class VertebraRecord:
    """One labelled 3D vertebra instance."""

    level: str
    confidence: float
    centroid: tuple[float, float, float]  # (slice, row, col)
    bounds: tuple[float, float, float, float, float, float]
    polygons: tuple[PolygonRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "confidence", round9(self.confidence))
        object.__setattr__(self, "centroid", _round_tuple(self.centroid))
        object.__setattr__(self, "bounds", _round_tuple(self.bounds))
        object.__setattr__(self, "polygons", tuple(self.polygons))

    def to_json_dict(self) -> dict:
        return {
            "level": self.level,
            "confidence": self.confidence,
            "centroid": list(self.centroid),
            "bounds": list(self.bounds),
            "polygons": [p.to_json_dict() for p in self.polygons],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "VertebraRecord":
        return cls(
            level=data["level"],
            confidence=data["confidence"],
            centroid=tuple(data["centroid"]),
            bounds=tuple(data["bounds"]),
            polygons=tuple(
                PolygonRecord.from_json_dict(p) for p in data["polygons"]
            ),
        )


@dataclasses.dataclass(frozen=True)
class IVVRecord:
    """One located intervertebral volume, optionally graded."""

    upper_level: str
    lower_level: str
    center: tuple[float, float]
    rotation_rad: float
    width_px: float
    height_px: float
    slice_range: tuple[int, int]
    scores: GradingScores

    def __post_init__(self):
        object.__setattr__(self, "center", _round_tuple(self.center))
        object.__setattr__(self, "rotation_rad", round9(self.rotation_rad))
        object.__setattr__(self, "width_px", round9(self.width_px))
        object.__setattr__(self, "height_px", round9(self.height_px))
        object.__setattr__(
            self, "slice_range", (int(self.slice_range[0]), int(self.slice_range[1]))
        )

    def to_json_dict(self) -> dict:
        return {
            "upper_level": self.upper_level,
            "lower_level": self.lower_level,
            "center": list(self.center),
            "rotation_rad": self.rotation_rad,
            "width_px": self.width_px,
            "height_px": self.height_px,
            "slice_range": list(self.slice_range),
            "scores": self.scores.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "IVVRecord":
        return cls(
            upper_level=data["upper_level"],
            lower_level=data["lower_level"],
            center=tuple(data["center"]),
            rotation_rad=data["rotation_rad"],
            width_px=data["width_px"],
            height_px=data["height_px"],
            slice_range=tuple(data["slice_range"]),
            scores=GradingScores.from_json_dict(data["scores"]),
        )


@dataclasses.dataclass(frozen=True)
class DetectionReport:
    """Pipeline output: labelled vertebrae plus optional graded IVVs."""

    vertebrae: tuple[VertebraRecord, ...] = ()
    ivvs: tuple[IVVRecord, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "vertebrae", tuple(self.vertebrae))
        object.__setattr__(self, "ivvs", tuple(self.ivvs))

    def to_json_dict(self) -> dict:
        return {
            "vertebrae": [v.to_json_dict() for v in self.vertebrae],
            "ivvs": [v.to_json_dict() for v in self.ivvs],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "DetectionReport":
        return cls(
            vertebrae=tuple(
                VertebraRecord.from_json_dict(v) for v in data["vertebrae"]
            ),
            ivvs=tuple(IVVRecord.from_json_dict(v) for v in data["ivvs"]),
        )


VERTEBRA_COLUMNS = (
    "level",
    "confidence",
    "centroid_slice",
    "centroid_row",
    "centroid_col",
    "slice_min",
    "slice_max",
    "row_min",
    "row_max",
    "col_min",
    "col_max",
    "polygons",
)

_IVV_HEAD_COLUMNS = (
    "upper_level",
    "lower_level",
    "center_row",
    "center_col",
    "rotation_rad",
    "width_px",
    "height_px",
    "slice_lo",
    "slice_hi",
)


def ivv_columns() -> tuple[str, ...]:
    """CSV columns of the IVV table: placement, then per-class scores."""
    columns = list(_IVV_HEAD_COLUMNS)
    for name, size in GRADING_GROUPS:
        columns.extend(f"{name}_{i}" for i in range(size))
    columns.extend(f"ccs_binary_{i}" for i in range(2))
    return tuple(columns)


def csv_paths(path) -> tuple[Path, Path]:
    """The two CSV file paths derived from a requested output path."""
    base = Path(path)
    stem = base.stem if base.suffix else base.name
    return (
        base.with_name(f"{stem}_vertebrae.csv"),
        base.with_name(f"{stem}_ivvs.csv"),
    )


def write_report(report: DetectionReport, fmt: str, path) -> None:
    """Write a report as ``json`` (one file) or ``csv`` (two files)."""
    if fmt == "json":
        text = json.dumps(report.to_json_dict(), indent=2)
        Path(path).write_text(text + "\n", encoding="ascii")
    elif fmt == "csv":
        vert_path, ivv_path = csv_paths(path)
        with open(vert_path, "w", newline="", encoding="ascii") as handle:
            writer = csv.writer(handle)
            writer.writerow(VERTEBRA_COLUMNS)
            for v in report.vertebrae:
                writer.writerow(
                    [
                        v.level,
                        v.confidence,
                        *v.centroid,
                        *v.bounds,
                        json.dumps([p.to_json_dict() for p in v.polygons]),
                    ]
                )
        with open(ivv_path, "w", newline="", encoding="ascii") as handle:
            writer = csv.writer(handle)
            writer.writerow(ivv_columns())
            for ivv in report.ivvs:
                row = [
                    ivv.upper_level,
                    ivv.lower_level,
                    *ivv.center,
                    ivv.rotation_rad,
                    ivv.width_px,
                    ivv.height_px,
                    *ivv.slice_range,
                ]
                row.extend(ivv.scores.to_vector())
                row.extend(ivv.scores.ccs_binary)
                writer.writerow(row)
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def read_report_json(path) -> DetectionReport:
    """Read back a JSON report written by :func:`write_report`."""
    with open(path, "r", encoding="ascii") as handle:
        return DetectionReport.from_json_dict(json.load(handle))

"""Synthetic spine scans with exact ground truth.

These fixtures drive the oracle backend and the test suite: stacked
vertebral bodies drawn as filled convex quadrilaterals on otherwise empty
slices. Each body is filled with an intensity that encodes its level
(:func:`level_fill`), which is how the oracle appearance backend recovers
the ground-truth label from a context volume without any bookkeeping.
"""

import json
import math
from pathlib import Path

import numpy as np

from . import geometry
from .dicom import SliceRecord, Volume, write_dicom
from .labelling import LEVELS
from .targets import VBAnnotation

# Raw pixel value filled into a vertebra of level index i (0 = S1). The
# step is large enough that interpolation ringing cannot move a value
# past the midpoint between adjacent levels.
FILL_STEP = 40.0


def level_fill(level_index: int) -> float:
    return FILL_STEP * (level_index + 1)


def nearest_level(value: float) -> int:
    idx = int(math.floor(value / FILL_STEP + 0.5)) - 1
    return min(max(idx, 0), len(LEVELS) - 1)


def rotate_offsets(offsets: np.ndarray, angle_rad: float) -> np.ndarray:
    """Rotate (row, col) offsets; positive angles tilt a row-constant
    edge's high-column end toward larger rows (see IVVSpec)."""
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    rot = np.array([[c, s], [-s, c]])
    return offsets @ rot.T


def make_vb(center, height: float, width: float, rotation_rad: float = 0.0) -> VBAnnotation:
    """A rectangular vertebra annotation, optionally rotated."""
    h2, w2 = height / 2.0, width / 2.0
    offsets = np.array(
        [[-h2, -w2], [-h2, w2], [h2, w2], [h2, -w2]], dtype=np.float64
    )
    corners = np.asarray(center, dtype=np.float64) + rotate_offsets(offsets, rotation_rad)
    return VBAnnotation(corners=corners)


def fill_convex_quad(image: np.ndarray, corners: np.ndarray, value: float) -> None:
    """Set pixels whose centers fall inside the quadrilateral (inclusive)."""
    hull = geometry.convex_hull(corners)
    h, w = image.shape
    r0 = max(int(math.floor(hull[:, 0].min())), 0)
    r1 = min(int(math.ceil(hull[:, 0].max())), h - 1)
    c0 = max(int(math.floor(hull[:, 1].min())), 0)
    c1 = min(int(math.ceil(hull[:, 1].max())), w - 1)
    if r0 > r1 or c0 > c1:
        return
    rr = np.arange(r0, r1 + 1, dtype=np.float64)[:, None]
    cc = np.arange(c0, c1 + 1, dtype=np.float64)[None, :]
    mask = np.ones((r1 - r0 + 1, c1 - c0 + 1), dtype=bool)
    n = len(hull)
    for i in range(n):
        a = hull[i]
        b = hull[(i + 1) % n]
        cross = (b[0] - a[0]) * (cc - a[1]) - (b[1] - a[1]) * (rr - a[0])
        mask &= cross >= 0.0
    image[r0 : r1 + 1, c0 : c1 + 1][mask] = value


def stacked_annotations(
    rng: np.random.Generator,
    dims: tuple[int, int],
    count: int,
    height_range=(14.0, 24.0),
    width_range=(18.0, 30.0),
    gap_range=(4.0, 10.0),
    max_rotation_deg=8.0,
    margin: float = 16.0,
) -> list[VBAnnotation]:
    """Vertically stacked, non-overlapping vertebra annotations.

    Bodies are placed bottom-up (anatomical order) with random sizes,
    gaps and small rotations. Raises ValueError when the requested count
    cannot fit the image height.
    """
    h, w = dims
    heights = rng.uniform(*height_range, size=count)
    widths = rng.uniform(*width_range, size=count)
    angles = np.radians(rng.uniform(-max_rotation_deg, max_rotation_deg, size=count))
    gaps = rng.uniform(*gap_range, size=count - 1) if count > 1 else np.array([])
    # Axis-aligned half extents of the rotated rectangles; spacing by
    # bounding boxes guarantees the quadrilaterals stay disjoint.
    half_v = 0.5 * (heights * np.cos(np.abs(angles)) + widths * np.sin(np.abs(angles)))
    half_h = 0.5 * (heights * np.sin(np.abs(angles)) + widths * np.cos(np.abs(angles)))
    total = 2.0 * half_v.sum() + gaps.sum()
    available = h - 2.0 * margin
    if total > available:
        raise ValueError(f"{count} bodies need {total:.0f} rows, have {available:.0f}")
    bottom = h - margin - rng.uniform(0.0, available - total)
    annotations = []
    for i in range(count):
        centre_row = bottom - half_v[i]
        centre_col = rng.uniform(margin + half_h[i], w - margin - half_h[i])
        annotations.append(
            make_vb((centre_row, centre_col), heights[i], widths[i], angles[i])
        )
        bottom -= 2.0 * half_v[i] + (gaps[i] if i < count - 1 else 0.0)
    return annotations


def build_spine_scan(
    levels=LEVELS,
    dims: tuple[int, int, int] = (16, 896, 448),
    slice_band: tuple[int, int] = (2, 13),
    pixel_spacing: tuple[float, float] = (1.0, 1.0),
    slice_gap_mm: float = 4.0,
    seed: int = 7,
):
    """A whole synthetic scan with one vertebra per requested level.

    Returns ``(volume, annotations_by_slice)`` where the annotation map
    holds ``slice_index -> [(VBAnnotation, level_name), ...]`` for the
    contiguous slice band every body spans. Bodies are stacked bottom-up
    in the given level order (index 0 is the lowest) and filled with
    their level intensity.
    """
    n_slices, h, w = dims
    rng = np.random.default_rng(seed)
    count = len(levels)
    annotations = stacked_annotations(
        rng,
        (h, w),
        count,
        height_range=(24.0, 27.0),
        width_range=(26.0, 34.0),
        gap_range=(4.0, 6.0),
        max_rotation_deg=4.0,
        margin=20.0,
    )

    lo, hi = slice_band
    if not 0 <= lo <= hi < n_slices:
        raise ValueError("slice band outside the scan")
    plane = np.zeros((h, w), dtype=np.float64)
    for ann, level in zip(annotations, levels):
        fill_convex_quad(plane, ann.corners, level_fill(LEVELS.index(level)))
    data = np.zeros(dims, dtype=np.float64)
    data[lo : hi + 1] = plane

    annotations_by_slice = {
        s: [(ann, level) for ann, level in zip(annotations, levels)]
        for s in range(lo, hi + 1)
    }
    positions = tuple(float(i) * slice_gap_mm for i in range(n_slices))
    volume = Volume(
        data=data,
        spacing=(slice_gap_mm, pixel_spacing[0], pixel_spacing[1]),
        slice_positions=positions,
    )
    return volume, annotations_by_slice


def write_dicom_series(directory, volume: Volume) -> list[Path]:
    """Write a volume as one canonical DICOM file per slice."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    n_slices, rows, cols = volume.data.shape
    for i in range(n_slices):
        record = SliceRecord(
            rows=rows,
            cols=cols,
            pixel_spacing=(volume.spacing[1], volume.spacing[2]),
            slice_position=volume.slice_positions[i],
            pixels=volume.data[i],
            instance_number=i + 1,
        )
        path = directory / f"slice_{i:03d}.dcm"
        path.write_bytes(write_dicom(record))
        paths.append(path)
    return paths


ORACLE_SIDECAR = "oracle.json"


def write_oracle_sidecar(directory, annotations_by_slice) -> Path:
    """Write ground-truth annotations next to a DICOM series.

    The sidecar lists each vertebra once with its level and a per-slice
    corner map; slice keys index into the position-sorted volume.
    """
    grouped: dict[int, dict] = {}
    for s, items in annotations_by_slice.items():
        for idx, (ann, level) in enumerate(items):
            entry = grouped.setdefault(idx, {"level": level, "polygons": {}})
            if entry["level"] != level:
                raise ValueError("inconsistent level for one vertebra across slices")
            entry["polygons"][str(int(s))] = ann.corners.tolist()
    payload = {"vertebrae": [grouped[i] for i in sorted(grouped)]}
    path = Path(directory) / ORACLE_SIDECAR
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="ascii")
    return path


def load_oracle_sidecar(directory) -> dict[int, list[tuple[VBAnnotation, str]]]:
    """Read a sidecar back into the per-slice annotation map."""
    path = Path(directory) / ORACLE_SIDECAR
    data = json.loads(path.read_text(encoding="ascii"))
    by_slice: dict[int, list[tuple[VBAnnotation, str]]] = {}
    for entry in data["vertebrae"]:
        level = entry["level"]
        for key, corners in entry["polygons"].items():
            ann = VBAnnotation(corners=np.asarray(corners, dtype=np.float64))
            by_slice.setdefault(int(key), []).append((ann, level))
    return by_slice

"""Decoding landmark tensors into vertebra quadrilaterals and 3D instances.

Decoding proceeds in three steps. Thresholding the five detection
channels and taking one maximum per 8-connected component yields point
landmarks. Each centroid landmark then collects one corner of each kind
by following the corner displacement arrows: a corner votes for the
centroid its arrow tip lands nearest, and a centroid accepts the best
corner unless the tip misses by more than half the arrow length. Finally
quadrilaterals on neighbouring slices are linked into 3D instances by
greedy IOU matching.
"""

import dataclasses
import warnings
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from . import geometry
from .errors import ShapeMismatch, ZeroArea
from .targets import CORNER_KINDS, LANDMARK_KINDS

DEFAULT_THRESHOLD = 0.5
DEFAULT_IOU_THRESHOLD = 0.25

_EIGHT_CONNECTED = np.ones((3, 3), dtype=np.intp)


@dataclasses.dataclass(frozen=True)
class Landmark:
    """A single decoded landmark: channel kind, pixel position, response."""

    kind: str
    pos: tuple[int, int]
    response: float


@dataclasses.dataclass
class VBPolygon:
    """A decoded vertebral body on one slice.

    ``corners`` is (4, 2) float in TL, TR, BR, BL order; ``centroid`` is
    the decoded centroid landmark, not the corner mean; ``score`` is the
    mean response of the five contributing landmarks.
    """

    slice_index: int
    corners: np.ndarray
    centroid: np.ndarray
    score: float

    def corner(self, kind: str) -> np.ndarray:
        return self.corners[CORNER_KINDS.index(kind)]


@dataclasses.dataclass
class Vertebra3D:
    """A vertebra instance linked across contiguous sagittal slices."""

    polygons: dict[int, VBPolygon]

    @property
    def slice_range(self) -> tuple[int, int]:
        keys = sorted(self.polygons)
        return keys[0], keys[-1]

    @property
    def centroid_3d(self) -> np.ndarray:
        """Mean of per-slice centroids as (slice, row, col)."""
        keys = sorted(self.polygons)
        pts = np.array(
            [[s, *self.polygons[s].centroid] for s in keys], dtype=np.float64
        )
        return pts.mean(axis=0)

    @property
    def bounds(self) -> tuple[float, float, float, float, float, float]:
        """(s0, s1, r0, r1, c0, c1) bounding box over all polygon corners."""
        keys = sorted(self.polygons)
        corners = np.vstack([self.polygons[s].corners for s in keys])
        return (
            float(keys[0]),
            float(keys[-1]),
            float(corners[:, 0].min()),
            float(corners[:, 0].max()),
            float(corners[:, 1].min()),
            float(corners[:, 1].max()),
        )

    @property
    def confidence(self) -> float:
        return float(np.mean([p.score for p in self.polygons.values()]))


def decode_landmarks(det: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> list[Landmark]:
    """Extract point landmarks from the five detection channels.

    Pixels at or above ``threshold`` are segmented into 8-connected
    components and each component contributes the position of its maximum
    response. Ties inside a component resolve to the first maximum in
    row-major order.
    """
    d = np.asarray(det, dtype=np.float64)
    if d.ndim != 3 or d.shape[0] != 5:
        raise ShapeMismatch(f"detection channels must be (5, H, W), got {d.shape}")
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie strictly between 0 and 1")
    found = []
    for k, kind in enumerate(LANDMARK_KINDS):
        channel = d[k]
        labels, count = ndimage.label(channel >= threshold, structure=_EIGHT_CONNECTED)
        if not count:
            continue
        for component_id, (sl_r, sl_c) in enumerate(ndimage.find_objects(labels), 1):
            vals = np.where(
                labels[sl_r, sl_c] == component_id, channel[sl_r, sl_c], -np.inf
            )
            r, c = np.unravel_index(int(np.argmax(vals)), vals.shape)
            pos = (int(r) + sl_r.start, int(c) + sl_c.start)
            found.append(Landmark(kind=kind, pos=pos, response=float(channel[pos])))
    return found


def group_quadrilaterals(
    landmarks: Sequence[Landmark],
    grp: np.ndarray,
    slice_index: int = 0,
) -> list[VBPolygon]:
    """Assemble corner landmarks around each centroid landmark.

    For each centroid, every candidate corner of a kind is scored by the
    distance between its displacement arrow tip and the centroid, and the
    nearest candidate wins (ties keep the earlier landmark). The match is
    rejected when that distance exceeds half the arrow length; a centroid
    missing any corner kind yields no polygon. A corner claimed by two
    centroids is allowed but reported through ``warnings``.
    """
    g = np.asarray(grp, dtype=np.float64)
    if g.ndim != 4 or g.shape[:2] != (4, 2):
        raise ShapeMismatch(f"grouping field must be (4, 2, H, W), got {g.shape}")

    centroids = [lm for lm in landmarks if lm.kind == "centroid"]
    by_kind = {kind: [lm for lm in landmarks if lm.kind == kind] for kind in CORNER_KINDS}
    usage: dict[tuple[str, tuple[int, int]], int] = {}
    polygons = []
    for centroid in centroids:
        cpos = np.array(centroid.pos, dtype=np.float64)
        corners = np.zeros((4, 2), dtype=np.float64)
        responses = [centroid.response]
        complete = True
        claimed = []
        for l, kind in enumerate(CORNER_KINDS):
            best = None
            for idx, cand in enumerate(by_kind[kind]):
                vec = g[l, :, cand.pos[0], cand.pos[1]]
                tip = np.array(cand.pos, dtype=np.float64) + vec
                miss = float(np.hypot(*(tip - cpos)))
                key = (miss, idx)
                if best is None or key < best[0]:
                    best = (key, cand, float(np.hypot(*vec)))
            if best is None:
                complete = False
                break
            (miss, _), cand, arrow_len = best
            if miss > 0.5 * arrow_len:
                complete = False
                break
            corners[l] = cand.pos
            responses.append(cand.response)
            claimed.append((kind, cand.pos))
        if not complete:
            continue
        for key in claimed:
            usage[key] = usage.get(key, 0) + 1
        polygons.append(
            VBPolygon(
                slice_index=slice_index,
                corners=corners,
                centroid=np.array(centroid.pos, dtype=np.float64),
                score=float(np.mean(responses)),
            )
        )
    shared = [key for key, n in usage.items() if n > 1]
    if shared:
        warnings.warn(
            f"{len(shared)} corner landmark(s) claimed by multiple centroids",
            stacklevel=2,
        )
    return polygons


def polygon_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two polygons' convex hulls.

    Raises :class:`ZeroArea` when either hull has area at or below 1e-12.
    """
    hull_a = geometry.convex_hull(np.asarray(a, dtype=np.float64))
    hull_b = geometry.convex_hull(np.asarray(b, dtype=np.float64))
    area_a = geometry.polygon_area(hull_a) if len(hull_a) >= 3 else 0.0
    area_b = geometry.polygon_area(hull_b) if len(hull_b) >= 3 else 0.0
    if min(area_a, area_b) <= 1e-12:
        raise ZeroArea("polygon area at or below 1e-12")
    clipped = geometry.clip_convex(hull_a, hull_b)
    inter = geometry.polygon_area(clipped) if len(clipped) >= 3 else 0.0
    union = area_a + area_b - inter
    return min(max(inter / union, 0.0), 1.0)


def link_slices(
    per_slice: Mapping[int, Sequence[VBPolygon]] | Sequence[tuple[int, Sequence[VBPolygon]]],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> list[Vertebra3D]:
    """Link per-slice polygons into 3D instances across adjacent slices.

    Sweeping slices in ascending order, polygons are matched against
    instances whose newest polygon sits on the immediately preceding
    slice. Candidate pairs above the IOU threshold are taken greedily in
    descending IOU order (ties: older instance first, then polygon
    order); each polygon and instance matches at most once and leftovers
    open new instances. An instance never skips a slice.
    """
    if isinstance(per_slice, Mapping):
        items = sorted(per_slice.items())
    else:
        items = sorted(per_slice, key=lambda kv: kv[0])
    seen = set()
    for s, _ in items:
        if s in seen:
            raise ValueError(f"duplicate slice index {s}")
        seen.add(s)

    instances: list[dict[int, VBPolygon]] = []
    active: list[int] = []  # instances extendable at the previous slice
    prev_slice: int | None = None
    for s, polys in items:
        polys = list(polys)
        if prev_slice is None or s != prev_slice + 1:
            active = []
        candidates = []
        for ai, inst_idx in enumerate(active):
            last_poly = instances[inst_idx][s - 1]
            for pi, poly in enumerate(polys):
                try:
                    iou = polygon_iou(last_poly.corners, poly.corners)
                except ZeroArea:
                    continue
                if iou > iou_threshold:
                    candidates.append((-iou, ai, pi))
        candidates.sort()
        used_inst: set[int] = set()
        used_poly: set[int] = set()
        next_active = []
        for neg_iou, ai, pi in candidates:
            if ai in used_inst or pi in used_poly:
                continue
            used_inst.add(ai)
            used_poly.add(pi)
            inst_idx = active[ai]
            instances[inst_idx][s] = polys[pi]
            next_active.append(inst_idx)
        for pi, poly in enumerate(polys):
            if pi not in used_poly:
                instances.append({s: poly})
                next_active.append(len(instances) - 1)
        active = sorted(next_active)
        prev_slice = s
    return [Vertebra3D(polygons=inst) for inst in instances]

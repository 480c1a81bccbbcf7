"""Landmark target tensors and training losses for vertebra detection.

A detector output for one image is a 13-channel tensor: five detection
channels carrying unit-peak Gaussian heatmaps (four vertebral-body corners
plus the centroid) and eight grouping channels carrying, for each corner
kind, the (row, col) components of a displacement field. Near a corner the
field stores the vector from the pixel to the centroid of the vertebra
owning that corner, which is what lets the decoder group corner detections
into quadrilaterals.

Channel layout of the stacked tensor:

====== ==========================================
0..3   corner heatmaps, order TL, TR, BR, BL
4      centroid heatmap
5 + 2l row component of the corner-l displacement
6 + 2l col component of the corner-l displacement
====== ==========================================
"""

import dataclasses

import numpy as np

from . import geometry, kernels
from .errors import OutOfBounds, ShapeMismatch

CORNER_KINDS = ("tl", "tr", "br", "bl")
LANDMARK_KINDS = CORNER_KINDS + ("centroid",)

# Stacked-tensor channel indices holding row / col vector components.
ROW_VECTOR_CHANNELS = (5, 7, 9, 11)
COL_VECTOR_CHANNELS = (6, 8, 10, 12)

DEFAULT_K_SIGMA = 0.002
DEFAULT_K_NBHD = 0.3
DEFAULT_ALPHA_T = 0.01


@dataclasses.dataclass
class VBAnnotation:
    """A single vertebral body: four corners in pixel coordinates.

    ``corners`` is (4, 2) float (row, col) in the order TL, TR, BR, BL.
    The quadrilateral must be simple (non-adjacent edges do not cross)
    and have positive area.
    """

    corners: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.corners, dtype=np.float64)
        if c.shape != (4, 2):
            raise ValueError(f"corners must have shape (4, 2), got {c.shape}")
        if not np.isfinite(c).all():
            raise ValueError("corners must be finite")
        edges = [(c[i], c[(i + 1) % 4]) for i in range(4)]
        for i, j in ((0, 2), (1, 3)):
            if geometry.segments_cross(*edges[i], *edges[j]):
                raise ValueError("corners do not form a simple quadrilateral")
        if geometry.polygon_area(c) <= 0.0:
            raise ValueError("quadrilateral must have positive area")
        self.corners = c

    @property
    def centroid(self) -> np.ndarray:
        return self.corners.mean(axis=0)

    @property
    def area(self) -> float:
        return geometry.polygon_area(self.corners)

    def landmark(self, kind: str) -> np.ndarray:
        if kind == "centroid":
            return self.centroid
        return self.corners[CORNER_KINDS.index(kind)]


@dataclasses.dataclass
class LandmarkTensor:
    """Detection heatmaps plus grouping displacement fields for one image."""

    det: np.ndarray  # (5, H, W)
    grp: np.ndarray  # (4, 2, H, W); components (d_row, d_col)

    def __post_init__(self):
        det = np.asarray(self.det, dtype=np.float64)
        grp = np.asarray(self.grp, dtype=np.float64)
        if det.ndim != 3 or det.shape[0] != 5:
            raise ShapeMismatch(f"det must be (5, H, W), got {det.shape}")
        if grp.shape != (4, 2) + det.shape[1:]:
            raise ShapeMismatch(
                f"grp must be (4, 2, {det.shape[1]}, {det.shape[2]}), got {grp.shape}"
            )
        self.det = det
        self.grp = grp

    @property
    def dims(self) -> tuple[int, int]:
        return self.det.shape[1], self.det.shape[2]

    def stacked(self) -> np.ndarray:
        """The (13, H, W) tensor with the documented channel layout."""
        return np.concatenate([self.det, self.grp.reshape((8,) + self.det.shape[1:])])

    @classmethod
    def from_stacked(cls, tensor: np.ndarray) -> "LandmarkTensor":
        arr = np.asarray(tensor, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != 13:
            raise ShapeMismatch(f"stacked tensor must be (13, H, W), got {arr.shape}")
        return cls(det=arr[:5], grp=arr[5:].reshape(4, 2, arr.shape[1], arr.shape[2]))


def _check_inside(annotations, dims) -> None:
    h, w = dims
    for ann in annotations:
        pts = np.vstack([ann.corners, ann.centroid[None]])
        if (
            (pts[:, 0] < 0).any()
            or (pts[:, 0] >= h).any()
            or (pts[:, 1] < 0).any()
            or (pts[:, 1] >= w).any()
        ):
            raise OutOfBounds(
                f"annotation points outside image of dims ({h}, {w})"
            )


def neighbourhood_radius(annotation: VBAnnotation, k_nbhd: float) -> float:
    """Radius of the grouping disc, proportional to sqrt of polygon area."""
    return k_nbhd * np.sqrt(annotation.area)


def disc_pixels(center, radius: float, dims) -> tuple[np.ndarray, np.ndarray]:
    """Integer pixels within ``radius`` of ``center``, clipped to the image.

    The same inclusive d^2 <= r^2 rule is used by the rendering kernels,
    so losses and rendered targets agree on neighbourhood membership.
    """
    h, w = dims
    cr, cc = float(center[0]), float(center[1])
    r0 = max(int(np.ceil(cr - radius)), 0)
    r1 = min(int(np.floor(cr + radius)), h - 1)
    c0 = max(int(np.ceil(cc - radius)), 0)
    c1 = min(int(np.floor(cc + radius)), w - 1)
    if r0 > r1 or c0 > c1:
        return np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp)
    rr = np.arange(r0, r1 + 1, dtype=np.float64)[:, None]
    cc_grid = np.arange(c0, c1 + 1, dtype=np.float64)[None, :]
    mask = (rr - cr) ** 2 + (cc_grid - cc) ** 2 <= radius * radius
    rows, cols = np.nonzero(mask)
    return rows + r0, cols + c0


def render_target(
    annotations,
    dims: tuple[int, int],
    k_sigma: float = DEFAULT_K_SIGMA,
    k_nbhd: float = DEFAULT_K_NBHD,
) -> LandmarkTensor:
    """Render ground-truth heatmaps and displacement fields.

    Heatmap peaks are 1 and the per-vertebra Gaussian variance is
    ``k_sigma * area``; overlapping Gaussians combine with the maximum.
    Displacement discs have radius ``k_nbhd * sqrt(area)``; where discs of
    the same corner kind overlap, the nearest corner owns the pixel.
    """
    if k_sigma <= 0.0 or k_nbhd < 0.0:
        raise ValueError("k_sigma must be positive and k_nbhd non-negative")
    annotations = list(annotations)
    _check_inside(annotations, dims)
    h, w = int(dims[0]), int(dims[1])

    det = np.zeros((5, h, w), dtype=np.float64)
    sigma2 = np.array([k_sigma * ann.area for ann in annotations])
    for k, kind in enumerate(LANDMARK_KINDS):
        points = np.array([ann.landmark(kind) for ann in annotations]).reshape(-1, 2)
        det[k] = kernels.render_peaks((h, w), points, sigma2)

    grp = np.zeros((4, 2, h, w), dtype=np.float64)
    centroids = np.array([ann.centroid for ann in annotations]).reshape(-1, 2)
    radii = np.array([neighbourhood_radius(ann, k_nbhd) for ann in annotations])
    for l in range(4):
        anchors = np.array([ann.corners[l] for ann in annotations]).reshape(-1, 2)
        grp[l] = kernels.render_displacement_field((h, w), anchors, centroids, radii)
    return LandmarkTensor(det=det, grp=grp)


def alpha_weights(target_channel: np.ndarray, threshold: float = DEFAULT_ALPHA_T) -> np.ndarray:
    """Class-balancing weights for one detection channel.

    Pixels whose target response is at least ``threshold`` count as
    positive. Positives are weighted N/(N+P) and negatives P/(N+P) with
    P, N the positive / negative pixel counts. When either class is empty
    the weights degenerate to the uniform 1/(N+P).
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie strictly between 0 and 1")
    t = np.asarray(target_channel, dtype=np.float64)
    pos = t >= threshold
    p = int(pos.sum())
    n = t.size - p
    if p == 0 or n == 0:
        return np.full(t.shape, 1.0 / t.size)
    weights = np.where(pos, n / (n + p), p / (n + p))
    return weights


def detection_loss(
    output: np.ndarray, target: np.ndarray, threshold: float = DEFAULT_ALPHA_T
) -> float:
    """Class-balanced L1 over the five detection channels.

    Weights are computed from ``target``, so the loss of a tensor against
    itself is exactly zero.
    """
    out = np.asarray(output, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    # Any channel count is accepted so degenerate single-channel cases can
    # be evaluated directly; the pipeline always passes (5, H, W).
    if out.shape != tgt.shape or out.ndim != 3:
        raise ShapeMismatch(
            f"detection channels must both be (K, H, W), got {out.shape} vs {tgt.shape}"
        )
    total = 0.0
    for k in range(out.shape[0]):
        weights = alpha_weights(tgt[k], threshold)
        total += float((weights * np.abs(out[k] - tgt[k])).sum())
    return total


def grouping_loss(
    field: np.ndarray, annotations, k_nbhd: float = DEFAULT_K_NBHD
) -> float:
    """Squared-error loss of a displacement field against annotations.

    For every corner of every annotated vertebra, pixels in the corner's
    neighbourhood disc should carry the vector from the pixel to that
    vertebra's centroid. The sum runs over all (vertebra, corner) pairs;
    a pixel inside two discs of the same kind contributes to both terms,
    so targets rendered with overlap resolution need not be a zero of this
    loss unless the discs are disjoint.
    """
    f = np.asarray(field, dtype=np.float64)
    if f.ndim != 4 or f.shape[:2] != (4, 2):
        raise ShapeMismatch(f"field must be (4, 2, H, W), got {f.shape}")
    dims = f.shape[2:]
    total = 0.0
    for ann in annotations:
        radius = neighbourhood_radius(ann, k_nbhd)
        centroid = ann.centroid
        for l in range(4):
            rows, cols = disc_pixels(ann.corners[l], radius, dims)
            if rows.size == 0:
                continue
            dr = f[l, 0, rows, cols] - (centroid[0] - rows)
            dc = f[l, 1, rows, cols] - (centroid[1] - cols)
            total += float((dr * dr + dc * dc).sum())
    return total


def composite_loss(
    output_det: np.ndarray,
    target_det: np.ndarray,
    field: np.ndarray,
    annotations,
    threshold: float = DEFAULT_ALPHA_T,
    k_nbhd: float = DEFAULT_K_NBHD,
) -> float:
    """Detection loss plus grouping loss."""
    return detection_loss(output_det, target_det, threshold) + grouping_loss(
        field, annotations, k_nbhd
    )

"""Intervertebral volume (IVV) localization and extraction.

The block of tissue between two adjacent vertebral bodies is sampled on
an oriented rectangle: centred midway between the two body centroids,
rotated so the lower endplate of the upper body is horizontal, twice as
wide as the wider body and half as tall as it is wide. The rectangle is
resampled at a fixed resolution on the shared sagittal slices of the two
bodies, giving a (112, 224, 9) volume.
"""

import dataclasses
import math

import numpy as np

from . import kernels
from .errors import EmptyDetection, NoSharedSlices

IVV_DIMS = (112, 224, 9)


@dataclasses.dataclass
class IVVSpec:
    """Oriented sampling rectangle for one intervertebral volume.

    ``rotation_rad`` rotates the rectangle's width axis from the image
    column axis; positive values tilt the BL->BR endplate direction
    toward larger rows. ``height_px`` is always ``width_px / 2``.
    """

    center: tuple[float, float]
    rotation_rad: float
    width_px: float
    height_px: float
    slice_range: tuple[int, int]
    level_pair: tuple[str, str] | None = None


def _central_polygon(vertebra):
    keys = sorted(vertebra.polygons)
    if not keys:
        raise EmptyDetection("instance has no polygons")
    mean = float(np.mean(keys))
    central = min(keys, key=lambda s: (abs(s - mean), s))
    return vertebra.polygons[central]


def _vb_width(vertebra) -> float:
    poly = _central_polygon(vertebra)
    top = float(np.hypot(*(poly.corner("tr") - poly.corner("tl"))))
    bottom = float(np.hypot(*(poly.corner("br") - poly.corner("bl"))))
    return 0.5 * (top + bottom)


def locate_ivv(upper, lower, level_pair: tuple[str, str] | None = None) -> IVVSpec:
    """Place the sampling rectangle between two adjacent vertebrae.

    ``upper`` is the anatomically higher instance (smaller image rows).
    The rectangle centre is the midpoint of the two 3D centroids'
    in-plane positions; its rotation makes the lower endplate (BL->BR
    edge) of the upper body horizontal; its width is twice the larger of
    the two body widths, measured on each body's central slice as the
    mean of top and bottom edge lengths.
    """
    upper_c = upper.centroid_3d
    lower_c = lower.centroid_3d
    if upper_c[1] >= lower_c[1]:
        raise ValueError("upper instance must lie above lower (smaller rows)")

    lo_u, hi_u = upper.slice_range
    lo_l, hi_l = lower.slice_range
    lo, hi = max(lo_u, lo_l), min(hi_u, hi_l)
    if lo > hi:
        raise NoSharedSlices(
            f"slice ranges [{lo_u}, {hi_u}] and [{lo_l}, {hi_l}] do not overlap"
        )

    endplate = _central_polygon(upper)
    edge = endplate.corner("br") - endplate.corner("bl")
    rotation = math.atan2(float(edge[0]), float(edge[1]))

    width = 2.0 * max(_vb_width(upper), _vb_width(lower))
    center = (
        0.5 * (float(upper_c[1]) + float(lower_c[1])),
        0.5 * (float(upper_c[2]) + float(lower_c[2])),
    )
    return IVVSpec(
        center=center,
        rotation_rad=rotation,
        width_px=width,
        height_px=width / 2.0,
        slice_range=(lo, hi),
        level_pair=level_pair,
    )


def extract_ivv_volume(
    volume, spec: IVVSpec, out_dims: tuple[int, int, int] = IVV_DIMS
) -> np.ndarray:
    """Sample the oriented rectangle over the shared slices.

    The output slice axis holds ``out_dims[2]`` positions spread evenly
    (inclusive) over the spec's slice range, each rounded to the nearest
    source slice with halfway ties toward the lower index. In-plane
    samples are bicubic with zero outside the image. Output axes are
    (height, width, slice).
    """
    out_h, out_w, out_s = out_dims
    lo, hi = spec.slice_range
    positions = np.linspace(float(lo), float(hi), out_s)
    slices = [int(math.ceil(z - 0.5)) for z in positions]

    u = (np.arange(out_h, dtype=np.float64) + 0.5) / out_h * spec.height_px
    u -= spec.height_px / 2.0
    v = (np.arange(out_w, dtype=np.float64) + 0.5) / out_w * spec.width_px
    v -= spec.width_px / 2.0
    cos_t = math.cos(spec.rotation_rad)
    sin_t = math.sin(spec.rotation_rad)
    rows = spec.center[0] + u[:, None] * cos_t + v[None, :] * sin_t
    cols = spec.center[1] - u[:, None] * sin_t + v[None, :] * cos_t

    out = np.zeros((out_h, out_w, out_s), dtype=np.float64)
    plane_cache: dict[int, np.ndarray] = {}
    for t, s in enumerate(slices):
        if s not in plane_cache:
            plane_cache[s] = kernels.sample_bicubic(volume.data[s], rows, cols)
        out[:, :, t] = plane_cache[s]
    return out

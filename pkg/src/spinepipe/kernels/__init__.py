"""Numerical kernels with a compiled fast path and a NumPy fallback.

The inner loops that dominate pipeline runtime live here: Catmull-Rom
resampling on a regular grid, bicubic sampling at free points, and the
rasterization of Gaussian peak maps and corner displacement fields.
Each kernel has two implementations with identical semantics:

* ``spinepipe.kernels._native`` - a Cython extension, used when it was
  compiled for this interpreter;
* ``spinepipe.kernels._fallback`` - vectorized NumPy, always available.

Setting the environment variable ``SPINEPIPE_PURE_PYTHON`` to a non-empty
value forces the fallback even when the extension is present. The active
choice is exposed as :data:`BACKEND` (``"native"`` or ``"python"``).
``benchmarks/bench_kernels.py`` compares the two on pipeline-shaped work.

All kernels use float64 internally. Interpolation follows the Catmull-Rom
convention (cubic kernel with a = -0.5) on pixel centers: output pixel
``i`` of an axis resampled from ``n`` to ``m`` samples reads input
coordinate ``(i + 0.5) * n / m - 0.5``. Grid resampling clamps source
indices at the image edge; free-point sampling treats everything outside
the image as zero.
"""

import os

import numpy as np

if os.environ.get("SPINEPIPE_PURE_PYTHON"):
    from . import _fallback as _impl
else:
    try:
        from . import _native as _impl  # type: ignore[no-redef]
    except ImportError:
        from . import _fallback as _impl

BACKEND: str = _impl.BACKEND


def resample_bicubic(image: np.ndarray, out_dims: tuple[int, int]) -> np.ndarray:
    """Resample the trailing two axes of ``image`` to ``out_dims``.

    Leading axes are treated as independent channels. Resampling to the
    input shape reproduces the input exactly; a 1x1 input replicates its
    single value.
    """
    img = np.ascontiguousarray(image, dtype=np.float64)
    if img.ndim < 2:
        raise ValueError("image must have at least two dimensions")
    out_r, out_c = int(out_dims[0]), int(out_dims[1])
    if out_r < 1 or out_c < 1:
        raise ValueError("output dimensions must be positive")
    lead = img.shape[:-2]
    in_r, in_c = img.shape[-2:]
    flat = img.reshape(-1, in_r, in_c)
    out = _impl.resample3(flat, out_r, out_c)
    return out.reshape(*lead, out_r, out_c)


def sample_bicubic(image: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sample a 2D ``image`` at free (row, col) points, zero outside."""
    img = np.ascontiguousarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("image must be 2D")
    r = np.ascontiguousarray(rows, dtype=np.float64)
    c = np.ascontiguousarray(cols, dtype=np.float64)
    if r.shape != c.shape:
        raise ValueError("rows and cols must have the same shape")
    out = _impl.sample_points(img, r.ravel(), c.ravel())
    return out.reshape(r.shape)


def render_peaks(
    shape: tuple[int, int], points: np.ndarray, sigma2: np.ndarray
) -> np.ndarray:
    """Render unit-peak isotropic Gaussians, combined with the maximum.

    ``points`` is (n, 2) float (row, col); ``sigma2`` is the per-point
    variance in px^2. Each Gaussian is evaluated on the integer grid inside
    a box of half-width six standard deviations and is zero beyond it.
    """
    out = np.zeros((int(shape[0]), int(shape[1])), dtype=np.float64)
    pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2)
    s2 = np.ascontiguousarray(sigma2, dtype=np.float64).reshape(-1)
    if pts.shape[0] != s2.shape[0]:
        raise ValueError("points and sigma2 must have equal length")
    if np.any(s2 <= 0.0):
        raise ValueError("variances must be positive")
    if pts.shape[0]:
        _impl.render_peaks(out, pts, s2)
    return out


def render_displacement_field(
    shape: tuple[int, int],
    anchors: np.ndarray,
    targets: np.ndarray,
    radii: np.ndarray,
) -> np.ndarray:
    """Render a (2, H, W) displacement field around anchor points.

    Pixels within ``radii[i]`` of ``anchors[i]`` receive the vector from
    the pixel to ``targets[i]`` as (row, col) components. Where discs
    overlap, the nearest anchor wins; exact ties keep the earlier anchor.
    Pixels in no disc stay zero.
    """
    h, w = int(shape[0]), int(shape[1])
    field = np.zeros((2, h, w), dtype=np.float64)
    anc = np.ascontiguousarray(anchors, dtype=np.float64).reshape(-1, 2)
    tgt = np.ascontiguousarray(targets, dtype=np.float64).reshape(-1, 2)
    rad = np.ascontiguousarray(radii, dtype=np.float64).reshape(-1)
    if not (anc.shape[0] == tgt.shape[0] == rad.shape[0]):
        raise ValueError("anchors, targets and radii must have equal length")
    if np.any(rad < 0.0):
        raise ValueError("radii must be non-negative")
    if anc.shape[0]:
        best = np.full((h, w), np.inf, dtype=np.float64)
        _impl.render_field(field, best, anc, tgt, rad)
    return field

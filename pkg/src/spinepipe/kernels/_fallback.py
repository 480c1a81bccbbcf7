"""Pure NumPy implementations of the numerical kernels.

Semantics, including edge handling, truncation radii and tie rules, are
shared with the Cython module ``_native``; keep the two in sync.
"""

import math

import numpy as np

BACKEND = "python"

# Source taps used by the cubic kernel, relative to floor(x).
_TAPS = np.array([-1, 0, 1, 2], dtype=np.intp)


def _cubic_weights(t: np.ndarray) -> np.ndarray:
    """Catmull-Rom (a = -0.5) weights for fractional offsets in [0, 1).

    Returns an array of shape ``t.shape + (4,)`` with one weight per tap.
    """
    d = np.abs(t[..., None] - _TAPS)
    w = np.zeros_like(d)
    near = d <= 1.0
    far = (d > 1.0) & (d < 2.0)
    dn = d[near]
    df = d[far]
    w[near] = ((1.5 * dn - 2.5) * dn) * dn + 1.0
    w[far] = ((-0.5 * df + 2.5) * df - 4.0) * df + 2.0
    return w


def _axis_taps(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray]:
    # Pixel-center coordinate of each output sample in input units.
    x = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(x).astype(np.intp)
    weights = _cubic_weights(x - base)
    idx = np.clip(base[:, None] + _TAPS[None, :], 0, n_in - 1)
    return idx, weights


def resample3(img: np.ndarray, out_r: int, out_c: int) -> np.ndarray:
    """Separable Catmull-Rom resample of a (C, H, W) stack."""
    _, in_r, in_c = img.shape
    ridx, rw = _axis_taps(in_r, out_r)
    cidx, cw = _axis_taps(in_c, out_c)
    tmp = np.zeros((img.shape[0], out_r, in_c), dtype=np.float64)
    for k in range(4):
        tmp += img[:, ridx[:, k], :] * rw[:, k][None, :, None]
    out = np.zeros((img.shape[0], out_r, out_c), dtype=np.float64)
    for k in range(4):
        out += tmp[:, :, cidx[:, k]] * cw[:, k][None, None, :]
    return out


def sample_points(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Bicubic samples at free points; taps outside the image read zero."""
    h, w = img.shape
    base_r = np.floor(rows).astype(np.intp)
    base_c = np.floor(cols).astype(np.intp)
    wr = _cubic_weights(rows - base_r)
    wc = _cubic_weights(cols - base_c)
    out = np.zeros(rows.shape, dtype=np.float64)
    for ki in range(4):
        rr = base_r + (ki - 1)
        row_ok = (rr >= 0) & (rr < h)
        if not row_ok.any():
            continue
        for kj in range(4):
            cc = base_c + (kj - 1)
            ok = row_ok & (cc >= 0) & (cc < w)
            if not ok.any():
                continue
            out[ok] += wr[ok, ki] * wc[ok, kj] * img[rr[ok], cc[ok]]
    return out


def render_peaks(out: np.ndarray, points: np.ndarray, sigma2: np.ndarray) -> None:
    """Max-combine unit-peak Gaussians into ``out`` in place."""
    h, w = out.shape
    for (pr, pc), s2 in zip(points, sigma2):
        rad = 6.0 * math.sqrt(s2)
        r0 = max(int(math.ceil(pr - rad)), 0)
        r1 = min(int(math.floor(pr + rad)), h - 1)
        c0 = max(int(math.ceil(pc - rad)), 0)
        c1 = min(int(math.floor(pc + rad)), w - 1)
        if r0 > r1 or c0 > c1:
            continue
        dr = np.arange(r0, r1 + 1, dtype=np.float64)[:, None] - pr
        dc = np.arange(c0, c1 + 1, dtype=np.float64)[None, :] - pc
        g = np.exp((dr * dr + dc * dc) / (-2.0 * s2))
        region = out[r0 : r1 + 1, c0 : c1 + 1]
        np.maximum(region, g, out=region)


def render_field(
    field: np.ndarray,
    best: np.ndarray,
    anchors: np.ndarray,
    targets: np.ndarray,
    radii: np.ndarray,
) -> None:
    """Fill a displacement field in place, nearest anchor winning overlaps."""
    h, w = best.shape
    for (ar, ac), (tr, tc), rad in zip(anchors, targets, radii):
        r0 = max(int(math.ceil(ar - rad)), 0)
        r1 = min(int(math.floor(ar + rad)), h - 1)
        c0 = max(int(math.ceil(ac - rad)), 0)
        c1 = min(int(math.floor(ac + rad)), w - 1)
        if r0 > r1 or c0 > c1:
            continue
        rr = np.arange(r0, r1 + 1, dtype=np.float64)[:, None]
        cc = np.arange(c0, c1 + 1, dtype=np.float64)[None, :]
        dr = rr - ar
        dc = cc - ac
        d2 = dr * dr + dc * dc
        sub_best = best[r0 : r1 + 1, c0 : c1 + 1]
        mask = (d2 <= rad * rad) & (d2 < sub_best)
        if not mask.any():
            continue
        sub_best[mask] = d2[mask]
        shape = mask.shape
        field[0, r0 : r1 + 1, c0 : c1 + 1][mask] = np.broadcast_to(tr - rr, shape)[mask]
        field[1, r0 : r1 + 1, c0 : c1 + 1][mask] = np.broadcast_to(tc - cc, shape)[mask]

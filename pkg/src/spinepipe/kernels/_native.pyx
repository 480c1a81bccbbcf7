# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the numerical kernels.

Semantics, including edge handling, truncation radii and tie rules, are
shared with the NumPy module ``_fallback``; keep the two in sync.
"""

import numpy as np

cimport numpy as cnp  # noqa: F401  (ensures numpy headers are linked)
from libc.math cimport ceil, exp, floor, sqrt

BACKEND = "native"


cdef inline double _cubic(double d) noexcept nogil:
    # Catmull-Rom kernel (a = -0.5) evaluated at a signed distance.
    if d < 0.0:
        d = -d
    if d <= 1.0:
        return ((1.5 * d - 2.5) * d) * d + 1.0
    if d < 2.0:
        return ((-0.5 * d + 2.5) * d - 4.0) * d + 2.0
    return 0.0


cdef void _axis_taps(
    Py_ssize_t n_in,
    Py_ssize_t n_out,
    Py_ssize_t[:, ::1] idx,
    double[:, ::1] weights,
) noexcept nogil:
    cdef Py_ssize_t i, k, j
    cdef double x, t
    cdef Py_ssize_t base
    for i in range(n_out):
        x = (i + 0.5) * (<double> n_in / <double> n_out) - 0.5
        base = <Py_ssize_t> floor(x)
        t = x - base
        for k in range(4):
            weights[i, k] = _cubic(t - (k - 1))
            j = base + k - 1
            if j < 0:
                j = 0
            elif j >= n_in:
                j = n_in - 1
            idx[i, k] = j


def resample3(double[:, :, ::1] img, int out_r, int out_c):
    cdef Py_ssize_t nch = img.shape[0]
    cdef Py_ssize_t in_r = img.shape[1]
    cdef Py_ssize_t in_c = img.shape[2]

    ridx_arr = np.empty((out_r, 4), dtype=np.intp)
    rw_arr = np.empty((out_r, 4), dtype=np.float64)
    cidx_arr = np.empty((out_c, 4), dtype=np.intp)
    cw_arr = np.empty((out_c, 4), dtype=np.float64)
    tmp_arr = np.zeros((nch, out_r, in_c), dtype=np.float64)
    out_arr = np.zeros((nch, out_r, out_c), dtype=np.float64)

    cdef Py_ssize_t[:, ::1] ridx = ridx_arr
    cdef double[:, ::1] rw = rw_arr
    cdef Py_ssize_t[:, ::1] cidx = cidx_arr
    cdef double[:, ::1] cw = cw_arr
    cdef double[:, :, ::1] tmp = tmp_arr
    cdef double[:, :, ::1] out = out_arr

    cdef Py_ssize_t c, i, j, k, src
    cdef double wt, acc
    with nogil:
        _axis_taps(in_r, out_r, ridx, rw)
        _axis_taps(in_c, out_c, cidx, cw)
        for c in range(nch):
            for i in range(out_r):
                for k in range(4):
                    src = ridx[i, k]
                    wt = rw[i, k]
                    for j in range(in_c):
                        tmp[c, i, j] += wt * img[c, src, j]
            for i in range(out_r):
                for j in range(out_c):
                    acc = 0.0
                    for k in range(4):
                        acc += cw[j, k] * tmp[c, i, cidx[j, k]]
                    out[c, i, j] = acc
    return out_arr


def sample_points(double[:, ::1] img, double[::1] rows, double[::1] cols):
    cdef Py_ssize_t h = img.shape[0]
    cdef Py_ssize_t w = img.shape[1]
    cdef Py_ssize_t n = rows.shape[0]
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t p, ki, kj, ii, jj, base_r, base_c
    cdef double r, c, tr, tc, wi, acc
    with nogil:
        for p in range(n):
            r = rows[p]
            c = cols[p]
            if r < -2.0 or r > h + 1.0 or c < -2.0 or c > w + 1.0:
                continue
            base_r = <Py_ssize_t> floor(r)
            base_c = <Py_ssize_t> floor(c)
            tr = r - base_r
            tc = c - base_c
            acc = 0.0
            for ki in range(4):
                ii = base_r + ki - 1
                if ii < 0 or ii >= h:
                    continue
                wi = _cubic(tr - (ki - 1))
                for kj in range(4):
                    jj = base_c + kj - 1
                    if jj < 0 or jj >= w:
                        continue
                    acc += wi * _cubic(tc - (kj - 1)) * img[ii, jj]
            out[p] = acc
    return out_arr


def render_peaks(double[:, ::1] out, double[:, ::1] points, double[::1] sigma2):
    cdef Py_ssize_t h = out.shape[0]
    cdef Py_ssize_t w = out.shape[1]
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t p, i, j, r0, r1, c0, c1
    cdef double pr, pc, s2, rad, lo_r, hi_r, lo_c, hi_c, dr, dc, g
    with nogil:
        for p in range(n):
            pr = points[p, 0]
            pc = points[p, 1]
            s2 = sigma2[p]
            rad = 6.0 * sqrt(s2)
            lo_r = ceil(pr - rad)
            hi_r = floor(pr + rad)
            lo_c = ceil(pc - rad)
            hi_c = floor(pc + rad)
            if lo_r < 0.0:
                lo_r = 0.0
            if hi_r > h - 1.0:
                hi_r = h - 1.0
            if lo_c < 0.0:
                lo_c = 0.0
            if hi_c > w - 1.0:
                hi_c = w - 1.0
            if lo_r > hi_r or lo_c > hi_c:
                continue
            r0 = <Py_ssize_t> lo_r
            r1 = <Py_ssize_t> hi_r
            c0 = <Py_ssize_t> lo_c
            c1 = <Py_ssize_t> hi_c
            for i in range(r0, r1 + 1):
                dr = i - pr
                for j in range(c0, c1 + 1):
                    dc = j - pc
                    g = exp((dr * dr + dc * dc) / (-2.0 * s2))
                    if g > out[i, j]:
                        out[i, j] = g


def render_field(
    double[:, :, ::1] field,
    double[:, ::1] best,
    double[:, ::1] anchors,
    double[:, ::1] targets,
    double[::1] radii,
):
    cdef Py_ssize_t h = best.shape[0]
    cdef Py_ssize_t w = best.shape[1]
    cdef Py_ssize_t n = anchors.shape[0]
    cdef Py_ssize_t p, i, j, r0, r1, c0, c1
    cdef double ar, ac, tr, tc, rad, rad2, lo_r, hi_r, lo_c, hi_c, dr, dc, d2
    with nogil:
        for p in range(n):
            ar = anchors[p, 0]
            ac = anchors[p, 1]
            tr = targets[p, 0]
            tc = targets[p, 1]
            rad = radii[p]
            rad2 = rad * rad
            lo_r = ceil(ar - rad)
            hi_r = floor(ar + rad)
            lo_c = ceil(ac - rad)
            hi_c = floor(ac + rad)
            if lo_r < 0.0:
                lo_r = 0.0
            if hi_r > h - 1.0:
                hi_r = h - 1.0
            if lo_c < 0.0:
                lo_c = 0.0
            if hi_c > w - 1.0:
                hi_c = w - 1.0
            if lo_r > hi_r or lo_c > hi_c:
                continue
            r0 = <Py_ssize_t> lo_r
            r1 = <Py_ssize_t> hi_r
            c0 = <Py_ssize_t> lo_c
            c1 = <Py_ssize_t> hi_c
            for i in range(r0, r1 + 1):
                dr = i - ar
                for j in range(c0, c1 + 1):
                    dc = j - ac
                    d2 = dr * dr + dc * dc
                    if d2 <= rad2 and d2 < best[i, j]:
                        best[i, j] = d2
                        field[0, i, j] = tr - i
                        field[1, i, j] = tc - j

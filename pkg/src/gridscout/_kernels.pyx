# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot-loop kernels: flood-fill labeling, disk-union probability sums,
rotated bilinear cropping, and the mixture-model E-step.

The NumPy twins live in _kernels_py; both backends must agree (see
tests/test_backends.py). Keep the pixel rules here in lockstep with that file.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, cos, exp, floor, log, sin

cnp.import_array()


def label_components(unsigned char[:, ::1] mask, int connectivity):
    """Label connected foreground regions with an explicit-stack flood fill.

    Returns (labels int32 array, number of labels). Labels are assigned in
    raster-scan discovery order starting at 1.
    """
    cdef Py_ssize_t h = mask.shape[0]
    cdef Py_ssize_t w = mask.shape[1]
    labels_arr = np.zeros((h, w), dtype=np.int32)
    cdef int[:, ::1] lab = labels_arr
    stack_arr = np.empty(h * w, dtype=np.intp)
    cdef Py_ssize_t[::1] stack = stack_arr
    cdef Py_ssize_t top, y, x, cy, cx, ny, nx, idx, k
    cdef int cur = 0
    cdef bint use8 = connectivity == 8
    # neighbour offsets: 4-connectivity first, diagonals appended for 8
    cdef Py_ssize_t[8] dys
    cdef Py_ssize_t[8] dxs
    dys[0] = -1; dxs[0] = 0
    dys[1] = 1;  dxs[1] = 0
    dys[2] = 0;  dxs[2] = -1
    dys[3] = 0;  dxs[3] = 1
    dys[4] = -1; dxs[4] = -1
    dys[5] = -1; dxs[5] = 1
    dys[6] = 1;  dxs[6] = -1
    dys[7] = 1;  dxs[7] = 1
    cdef Py_ssize_t nneigh = 8 if use8 else 4

    for y in range(h):
        for x in range(w):
            if mask[y, x] != 0 and lab[y, x] == 0:
                cur += 1
                lab[y, x] = cur
                top = 0
                stack[top] = y * w + x
                top += 1
                while top > 0:
                    top -= 1
                    idx = stack[top]
                    cy = idx / w
                    cx = idx - cy * w
                    for k in range(nneigh):
                        ny = cy + dys[k]
                        nx = cx + dxs[k]
                        if 0 <= ny < h and 0 <= nx < w:
                            if mask[ny, nx] != 0 and lab[ny, nx] == 0:
                                lab[ny, nx] = cur
                                stack[top] = ny * w + nx
                                top += 1
    return labels_arr, cur


def disk_union_sum(double[:, ::1] prob, double[:, ::1] pts, double radius,
                   int[:, ::1] stamp, int stamp_id):
    """Sum `prob` over the union of closed disks centred at `pts`.

    A pixel belongs to a disk when (px-cx)^2 + (py-cy)^2 <= radius^2; the
    rounded centre pixel (floor(c + 0.5)) is always included so radius 0
    stamps one pixel per point. `stamp` is caller-owned scratch reused across
    calls; pixels with stamp == stamp_id have been counted already.

    Returns (sum of prob over the union, number of pixels in the union).
    """
    cdef Py_ssize_t h = prob.shape[0]
    cdef Py_ssize_t w = prob.shape[1]
    cdef Py_ssize_t n = pts.shape[0]
    cdef double S = 0.0
    cdef long M = 0
    cdef double r2 = radius * radius
    cdef double cx, cy, dx, dy
    cdef Py_ssize_t k, px, py, x0, x1, y0, y1
    for k in range(n):
        cx = pts[k, 0]
        cy = pts[k, 1]
        x0 = <Py_ssize_t>ceil(cx - radius)
        x1 = <Py_ssize_t>floor(cx + radius)
        y0 = <Py_ssize_t>ceil(cy - radius)
        y1 = <Py_ssize_t>floor(cy + radius)
        if x0 < 0:
            x0 = 0
        if y0 < 0:
            y0 = 0
        if x1 > w - 1:
            x1 = w - 1
        if y1 > h - 1:
            y1 = h - 1
        for py in range(y0, y1 + 1):
            dy = py - cy
            for px in range(x0, x1 + 1):
                dx = px - cx
                if dx * dx + dy * dy <= r2:
                    if stamp[py, px] != stamp_id:
                        stamp[py, px] = stamp_id
                        S += prob[py, px]
                        M += 1
        px = <Py_ssize_t>floor(cx + 0.5)
        py = <Py_ssize_t>floor(cy + 0.5)
        if 0 <= px < w and 0 <= py < h and stamp[py, px] != stamp_id:
            stamp[py, px] = stamp_id
            S += prob[py, px]
            M += 1
    return S, M


def bilinear_crop(double[:, ::1] img, double cx, double cy, double theta,
                  double fill, double[:, ::1] out):
    """Sample a rotated rectangle from `img` into `out` by inverse rotation.

    Output pixel (i, j) samples img at
        c + (j - (W-1)/2) * (cos t, sin t) + (i - (H-1)/2) * (-sin t, cos t).
    Samples outside the pixel-centre extent receive `fill`.
    """
    cdef Py_ssize_t H = out.shape[0]
    cdef Py_ssize_t W = out.shape[1]
    cdef Py_ssize_t h = img.shape[0]
    cdef Py_ssize_t w = img.shape[1]
    cdef double ct = cos(theta)
    cdef double st = sin(theta)
    cdef double u, v, x, y, fx, fy
    cdef Py_ssize_t i, j, x0, y0, x1, y1
    for i in range(H):
        v = i - (H - 1) / 2.0
        for j in range(W):
            u = j - (W - 1) / 2.0
            x = cx + u * ct - v * st
            y = cy + u * st + v * ct
            if x < 0 or x > w - 1 or y < 0 or y > h - 1:
                out[i, j] = fill
            else:
                x0 = <Py_ssize_t>floor(x)
                y0 = <Py_ssize_t>floor(y)
                x1 = x0 + 1
                y1 = y0 + 1
                if x1 > w - 1:
                    x1 = w - 1
                if y1 > h - 1:
                    y1 = h - 1
                fx = x - x0
                fy = y - y0
                out[i, j] = (img[y0, x0] * (1 - fx) * (1 - fy)
                             + img[y0, x1] * fx * (1 - fy)
                             + img[y1, x0] * (1 - fx) * fy
                             + img[y1, x1] * fx * fy)
    return np.asarray(out)


def em_estep(double[::1] values, double[::1] counts, double w_bg, double w_fg,
             double r_bg, double r_fg):
    """One E-step of the two-component Poisson mixture over (value, count) pairs.

    Per-value log densities use the factorial-free form x*ln(r) - r. Returns
    (log-likelihood, sum of count * resp_fg, sum of count * resp_fg * value).
    """
    cdef Py_ssize_t n = values.shape[0]
    cdef double lwb = log(w_bg)
    cdef double lwf = log(w_fg)
    cdef double lrb = log(r_bg)
    cdef double lrf = log(r_fg)
    cdef double ll = 0.0
    cdef double nf = 0.0
    cdef double sf = 0.0
    cdef double x, c, lb, lf, m, z, rf
    cdef Py_ssize_t k
    for k in range(n):
        x = values[k]
        c = counts[k]
        lb = lwb + x * lrb - r_bg
        lf = lwf + x * lrf - r_fg
        m = lb if lb > lf else lf
        z = exp(lb - m) + exp(lf - m)
        ll += c * (m + log(z))
        rf = exp(lf - m) / z
        nf += c * rf
        sf += c * rf * x
    return ll, nf, sf

"""NumPy reference implementations of the hot-loop kernels.

These mirror the compiled versions in _kernels.pyx and are the fallback
backend when the extension is unavailable. Pixel rules (disk membership,
rounded-centre inclusion, bilinear weights) must stay in lockstep with the
compiled code; tests/test_backends.py checks agreement.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

_STRUCT4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_STRUCT8 = np.ones((3, 3), dtype=bool)


def label_components(mask: np.ndarray, connectivity: int):
    """Label connected foreground regions. Returns (labels int32, count)."""
    structure = _STRUCT8 if connectivity == 8 else _STRUCT4
    labels, n = ndimage.label(mask != 0, structure=structure)
    return labels.astype(np.int32, copy=False), int(n)


def paint_disks(shape: tuple[int, int], pts: np.ndarray, radius: float) -> np.ndarray:
    """Boolean union of closed disks centred at pts, clipped to `shape`.

    A pixel (px, py) is in the disk at (cx, cy) when
    (px-cx)^2 + (py-cy)^2 <= radius^2. The rounded centre pixel
    (floor(c + 0.5)) is always painted, so radius 0 marks one pixel.
    """
    h, w = shape
    out = np.zeros((h, w), dtype=bool)
    r = float(radius)
    for cx, cy in np.asarray(pts, dtype=np.float64).reshape(-1, 2):
        x0 = max(int(np.ceil(cx - r)), 0)
        x1 = min(int(np.floor(cx + r)), w - 1)
        y0 = max(int(np.ceil(cy - r)), 0)
        y1 = min(int(np.floor(cy + r)), h - 1)
        if x1 >= x0 and y1 >= y0:
            ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
            inside = (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
            out[y0:y1 + 1, x0:x1 + 1] |= inside
        px = int(np.floor(cx + 0.5))
        py = int(np.floor(cy + 0.5))
        if 0 <= px < w and 0 <= py < h:
            out[py, px] = True
    return out


def disk_union_sum(prob: np.ndarray, pts: np.ndarray, radius: float,
                   stamp=None, stamp_id: int = 0):
    """Sum `prob` over the union of disks at pts; returns (sum, pixel count).

    `stamp`/`stamp_id` exist for signature parity with the compiled kernel
    and are ignored here.
    """
    painted = paint_disks(prob.shape, pts, radius)
    return float(prob[painted].sum()), int(painted.sum())


def bilinear_crop(img: np.ndarray, cx: float, cy: float, theta: float,
                  fill: float, out: np.ndarray) -> np.ndarray:
    """Sample a rotated rectangle from `img` into `out`; see compiled twin."""
    H, W = out.shape
    h, w = img.shape
    ct = float(np.cos(theta))
    st = float(np.sin(theta))
    jj, ii = np.meshgrid(np.arange(W, dtype=np.float64),
                         np.arange(H, dtype=np.float64))
    u = jj - (W - 1) / 2.0
    v = ii - (H - 1) / 2.0
    x = cx + u * ct - v * st
    y = cy + u * st + v * ct
    valid = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xc = np.clip(x, 0, w - 1)
    yc = np.clip(y, 0, h - 1)
    x0 = np.floor(xc).astype(np.intp)
    y0 = np.floor(yc).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    vals = (img[y0, x0] * (1 - fx) * (1 - fy)
            + img[y0, x1] * fx * (1 - fy)
            + img[y1, x0] * (1 - fx) * fy
            + img[y1, x1] * fx * fy)
    out[...] = np.where(valid, vals, fill)
    return out


def em_estep(values: np.ndarray, counts: np.ndarray, w_bg: float, w_fg: float,
             r_bg: float, r_fg: float):
    """Vectorised E-step over (value, count) pairs; see compiled twin."""
    lb = np.log(w_bg) + values * np.log(r_bg) - r_bg
    lf = np.log(w_fg) + values * np.log(r_fg) - r_fg
    m = np.maximum(lb, lf)
    z = np.exp(lb - m) + np.exp(lf - m)
    ll = float(np.sum(counts * (m + np.log(z))))
    rf = np.exp(lf - m) / z
    nf = float(np.sum(counts * rf))
    sf = float(np.sum(counts * rf * values))
    return ll, nf, sf

"""Backend selection: compiled extension kernels with a NumPy fallback.

The compiled module (gridscout._kernels, built from Cython) is preferred when
importable; otherwise the pure-NumPy twins take over. Set GRIDSCOUT_BACKEND to
"compiled" or "numpy" to force a choice; forcing "compiled" when the extension
is missing raises ImportError rather than silently degrading.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

_choice = os.environ.get("GRIDSCOUT_BACKEND", "").strip().lower()
if _choice not in ("", "compiled", "numpy"):
    raise ImportError(
        f"GRIDSCOUT_BACKEND must be 'compiled' or 'numpy', got {_choice!r}"
    )

_impl = None
if _choice in ("", "compiled"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
    except ImportError:
        if _choice == "compiled":
            raise ImportError(
                "GRIDSCOUT_BACKEND=compiled but the gridscout._kernels "
                "extension is not built"
            )
        _impl = None

if _impl is not None:
    BACKEND = "compiled"
else:
    BACKEND = "numpy"
    _impl = _kernels_py

paint_disks = _kernels_py.paint_disks


def label_components(mask: np.ndarray, connectivity: int):
    """Label connected regions of a boolean/integer mask.

    Returns (labels int32 array, number of components); labels follow
    raster-scan discovery order starting at 1.
    """
    m = np.ascontiguousarray(mask != 0).astype(np.uint8)
    return _impl.label_components(m, int(connectivity))


def bilinear_crop(img: np.ndarray, cx: float, cy: float, width: int,
                  height: int, theta_rad: float, fill: float) -> np.ndarray:
    """Crop a width x height rectangle rotated by theta_rad around (cx, cy)."""
    src = np.ascontiguousarray(img, dtype=np.float64)
    out = np.empty((int(height), int(width)), dtype=np.float64)
    _impl.bilinear_crop(src, float(cx), float(cy), float(theta_rad),
                        float(fill), out)
    return out


def em_estep(values: np.ndarray, counts: np.ndarray, w_bg: float, w_fg: float,
             r_bg: float, r_fg: float):
    """E-step over unique (value, count) pairs; returns (ll, n_fg, s_fg)."""
    v = np.ascontiguousarray(values, dtype=np.float64)
    c = np.ascontiguousarray(counts, dtype=np.float64)
    return _impl.em_estep(v, c, float(w_bg), float(w_fg),
                          float(r_bg), float(r_fg))


class DiskSummer:
    """Repeated disk-union sums over one probability map.

    Owns the scratch stamp buffer the compiled kernel needs so candidate
    searches do not reallocate or clear per call.
    """

    def __init__(self, prob: np.ndarray):
        self._prob = np.ascontiguousarray(prob, dtype=np.float64)
        self._stamp = np.zeros(self._prob.shape, dtype=np.int32)
        self._id = 0

    def __call__(self, pts: np.ndarray, radius: float):
        """Return (sum of prob over disk union at pts, union pixel count)."""
        p = np.ascontiguousarray(pts, dtype=np.float64).reshape(-1, 2)
        self._id += 1
        return _impl.disk_union_sum(self._prob, p, float(radius),
                                    self._stamp, self._id)

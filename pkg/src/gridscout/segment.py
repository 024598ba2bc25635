"""Pixel-level segmentation of low-magnification images.

A two-component Poisson mixture separates bright grid squares from
background; a flood fill groups the foreground mask into components.
Per-pixel log-density uses the factorial-free form x*ln(r) - r (the x! term
is constant per pixel and cancels in responsibilities and the decision
boundary).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .errors import DegenerateDataError
from .imgio import GrayImage

#: fraction of image pixels below which components are dropped by default
MIN_COMPONENT_FRACTION = 0.0005

# rates this close (relative to the data mean) mean EM collapsed to one class
_COLLAPSE_FACTOR = 0.05

_RATE_FLOOR = 1e-12
_WEIGHT_FLOOR = 1e-12


@dataclass(frozen=True)
class PoissonMixture:
    """Two-component Poisson mixture; background is the dimmer class."""

    weight_bg: float
    weight_fg: float
    rate_bg: float
    rate_fg: float
    log_likelihood: float
    iterations: int
    degenerate: bool
    loglik_trace: tuple = field(repr=False, default=())


@dataclass(frozen=True)
class PixelMask:
    """Boolean foreground mask with the source image's shape."""

    width: int
    height: int
    bits: np.ndarray

    def __post_init__(self):
        if self.bits.shape != (self.height, self.width):
            raise ValueError(
                f"bits shape {self.bits.shape} does not match "
                f"(height, width) = ({self.height}, {self.width})"
            )


@dataclass(frozen=True)
class PixelComponent:
    """Connected group of foreground pixels.

    pixels: (N, 2) int array of (x, y) coordinates in raster order.
    """

    pixels: np.ndarray
    size: int


def _as_data(img) -> np.ndarray:
    return img.data if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)


def fit_poisson_mixture(img, tol: float = 1e-6,
                        max_iters: int = 100) -> PoissonMixture:
    """Fit the two-rate mixture by EM over unique intensity values.

    Initial rates are the 25th/75th percentile intensities with equal
    weights. Stops when the relative log-likelihood change drops below
    `tol` or after `max_iters` updates. The returned log_likelihood is
    evaluated at the returned parameters; loglik_trace holds the value
    before each update plus that final point.
    """
    data = _as_data(img).ravel()
    if data.size == 0:
        raise ValueError("cannot fit a mixture to an empty image")
    if not np.isfinite(data).all():
        raise ValueError("image contains non-finite intensities")
    if data.min() < 0:
        raise ValueError("mixture fitting requires non-negative intensities")

    values, counts = np.unique(data, return_counts=True)
    if values.size < 2:
        raise DegenerateDataError("all pixels are identical")
    counts = counts.astype(np.float64)
    total = float(counts.sum())
    grand_sum = float(np.dot(values, counts))
    mean = grand_sum / total

    r_bg = float(np.percentile(data, 25))
    r_fg = float(np.percentile(data, 75))
    if r_fg - r_bg < 1e-9:
        # flat percentiles (heavy point mass); straddle the mean instead
        r_bg, r_fg = 0.75 * mean, 1.25 * mean
    r_bg = max(r_bg, _RATE_FLOOR)
    r_fg = max(r_fg, _RATE_FLOOR)
    w_bg = w_fg = 0.5

    trace = []
    iterations = 0
    for _ in range(max_iters):
        ll, n_fg, s_fg = _backend.em_estep(values, counts, w_bg, w_fg, r_bg, r_fg)
        if trace and abs(ll - trace[-1]) < tol * max(abs(trace[-1]), 1e-300):
            trace.append(ll)
            break
        trace.append(ll)
        iterations += 1
        n_fg = min(max(n_fg, _WEIGHT_FLOOR), total - _WEIGHT_FLOOR)
        w_fg = n_fg / total
        w_bg = 1.0 - w_fg
        r_fg = max(s_fg / n_fg, _RATE_FLOOR)
        r_bg = max((grand_sum - s_fg) / (total - n_fg), _RATE_FLOOR)
    else:
        ll, _, _ = _backend.em_estep(values, counts, w_bg, w_fg, r_bg, r_fg)
        trace.append(ll)

    if r_bg > r_fg:
        r_bg, r_fg = r_fg, r_bg
        w_bg, w_fg = w_fg, w_bg
    degenerate = (r_fg - r_bg) < _COLLAPSE_FACTOR * mean
    return PoissonMixture(weight_bg=w_bg, weight_fg=w_fg, rate_bg=r_bg,
                          rate_fg=r_fg, log_likelihood=trace[-1],
                          iterations=iterations, degenerate=degenerate,
                          loglik_trace=tuple(trace))


def decision_boundary(m: PoissonMixture) -> float:
    """Intensity x* where the weighted class log-densities cross."""
    if m.degenerate:
        raise DegenerateDataError("mixture is degenerate; no usable boundary")
    return (m.rate_fg - m.rate_bg + np.log(m.weight_bg / m.weight_fg)) \
        / np.log(m.rate_fg / m.rate_bg)


def classify_pixels(img, m: PoissonMixture) -> PixelMask:
    """Threshold pixels at the mixture's decision boundary; ties go to
    foreground."""
    data = _as_data(img)
    x_star = decision_boundary(m)
    bits = data >= x_star
    return PixelMask(width=data.shape[1], height=data.shape[0], bits=bits)


def connected_components(mask: PixelMask, connectivity: int = 4,
                         min_size: int | None = None) -> list[PixelComponent]:
    """Group foreground pixels into connected components.

    min_size defaults to MIN_COMPONENT_FRACTION of the image pixels (at
    least 1). Components are ordered by (min y, min x); pixels inside each
    component come in raster order.
    """
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    bits = mask.bits
    if min_size is None:
        min_size = max(1, int(round(MIN_COMPONENT_FRACTION * bits.size)))
    labels, n = _backend.label_components(bits, connectivity)
    if n == 0:
        return []
    flat = labels.ravel()
    order = np.argsort(flat, kind="stable")
    sizes = np.bincount(flat, minlength=n + 1)
    # order groups pixels by label; labels start at 1 after `sizes[0]` zeros
    start = int(sizes[0])
    components = []
    h, w = bits.shape
    for label in range(1, n + 1):
        stop = start + int(sizes[label])
        idx = order[start:stop]
        start = stop
        if idx.size < min_size:
            continue
        ys, xs = np.divmod(idx, w)
        pixels = np.column_stack([xs, ys]).astype(np.int64)
        components.append(PixelComponent(pixels=pixels, size=int(idx.size)))
    components.sort(key=lambda c: (int(c.pixels[:, 1].min()),
                                   int(c.pixels[:, 0].min())))
    return components

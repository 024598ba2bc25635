"""Square-lattice fitting over hole-probability maps and hole crop emission.

Centroids of high-probability regions propose anchor pairs (each centroid
with its K nearest neighbours); each pair (a, b) defines a square lattice
with basis u = b - a, v = perp(u). The pair whose rasterized lattice has
the lowest pixelwise cost against the map wins, and the lattice extends
across the whole image, including holes the map missed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .errors import GeometryError
from .evalmatch import Region
from .imgio import GrayImage, ProbabilityMap

_MIN_PAIR_SPACING = 4.0  # px; closer anchor pairs are degenerate, discarded


@dataclass(frozen=True)
class Centroid:
    """Probability-weighted center of one high-probability region."""

    x: float
    y: float
    mass: float


@dataclass(frozen=True)
class CostWeights:
    """w_fp penalizes probability off the lattice; w_fn penalizes lattice
    pixels with low probability."""

    w_fp: float = 1.0
    w_fn: float = 2.0

    def __post_init__(self):
        if self.w_fp < 0 or self.w_fn < 0:
            raise ValueError("cost weights must be non-negative")
        if self.w_fp == 0 and self.w_fn == 0:
            raise ValueError("cost weights must not both be zero")


@dataclass(frozen=True)
class Lattice:
    """Square lattice anchored at two points, extended across an image."""

    anchor_a: tuple[float, float]
    anchor_b: tuple[float, float]
    spacing: float
    points: np.ndarray = field(repr=False)
    cost: float | None = None

    @property
    def u(self) -> tuple[float, float]:
        return (self.anchor_b[0] - self.anchor_a[0],
                self.anchor_b[1] - self.anchor_a[1])

    @property
    def v(self) -> tuple[float, float]:
        ux, uy = self.u
        return (-uy, ux)


@dataclass(frozen=True)
class HoleCrop:
    """Axis-aligned square crop around one lattice point."""

    center: tuple[float, float]
    side: float
    prob_sum: float
    pixels: GrayImage
    label: bool | None = None


@dataclass(frozen=True)
class FitParams:
    threshold: float = 0.5
    k: int = 6
    weights: CostWeights = CostWeights()
    radius: float | None = None  # None: max(3, round(spacing / 8)) per pair
    min_region: int = 4


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def extract_centroids(pmap: ProbabilityMap, threshold: float = 0.5,
                      min_region: int = 4) -> list[Centroid]:
    """Probability-weighted centroids of 4-connected regions above threshold.

    Regions smaller than min_region pixels are dropped. Output follows the
    regions' raster discovery order.
    """
    data = pmap.data
    mask = data > threshold
    labels, n = _backend.label_components(mask, 4)
    if n == 0:
        return []
    flat = labels.ravel()
    h, w = data.shape
    ys, xs = np.divmod(np.arange(flat.size), w)
    weights = data.ravel()
    sizes = np.bincount(flat, minlength=n + 1)
    mass = np.bincount(flat, weights=weights, minlength=n + 1)
    mx = np.bincount(flat, weights=weights * xs, minlength=n + 1)
    my = np.bincount(flat, weights=weights * ys, minlength=n + 1)
    first = np.full(n + 1, flat.size)
    np.minimum.at(first, flat, np.arange(flat.size))
    order = sorted(range(1, n + 1), key=lambda lbl: first[lbl])
    out = []
    for lbl in order:
        if sizes[lbl] < min_region or mass[lbl] <= 0:
            continue
        out.append(Centroid(x=float(mx[lbl] / mass[lbl]),
                            y=float(my[lbl] / mass[lbl]),
                            mass=float(mass[lbl])))
    return out


def candidate_anchor_pairs(cents: list[Centroid],
                           k: int = 6) -> list[tuple[Centroid, Centroid]]:
    """Each centroid paired with its K nearest others, deduplicated.

    Pairs come back ordered by their (i, j) centroid indices; neighbour
    ranking breaks distance ties by index, so the result is deterministic.
    """
    n = len(cents)
    if n < 2:
        raise ValueError("need at least 2 centroids to propose anchor pairs")
    coords = np.array([[c.x, c.y] for c in cents])
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    seen = set()
    for i in range(n):
        order = np.argsort(dist[i], kind="stable")
        taken = 0
        for j in order:
            if j == i:
                continue
            seen.add((min(i, int(j)), max(i, int(j))))
            taken += 1
            if taken >= k:
                break
    return [(cents[i], cents[j]) for i, j in sorted(seen)]


def lattice_points(a: tuple[float, float], b: tuple[float, float],
                   shape: tuple[int, int]) -> np.ndarray:
    """All lattice points whose centers land in the pixel extent of `shape`.

    `shape` is (width, height); a point (x, y) is kept when
    -0.5 <= x <= width - 0.5 and -0.5 <= y <= height - 0.5. Points are
    sorted by (y, x).
    """
    w, h = shape
    ax, ay = float(a[0]), float(a[1])
    ux, uy = float(b[0]) - ax, float(b[1]) - ay
    vx, vy = -uy, ux
    det = ux * vy - uy * vx
    if abs(det) < 1e-12:
        raise ValueError("lattice spacing is zero")
    corners = np.array([[-0.5, -0.5], [w - 0.5, -0.5],
                        [-0.5, h - 0.5], [w - 0.5, h - 0.5]])
    rel = corners - np.array([ax, ay])
    ii = (rel[:, 0] * vy - rel[:, 1] * vx) / det
    jj = (-rel[:, 0] * uy + rel[:, 1] * ux) / det
    i_lo, i_hi = int(np.floor(ii.min())) - 1, int(np.ceil(ii.max())) + 1
    j_lo, j_hi = int(np.floor(jj.min())) - 1, int(np.ceil(jj.max())) + 1
    i_grid, j_grid = np.meshgrid(np.arange(i_lo, i_hi + 1),
                                 np.arange(j_lo, j_hi + 1))
    px = ax + i_grid * ux + j_grid * vx
    py = ay + i_grid * uy + j_grid * vy
    keep = (px >= -0.5) & (px <= w - 0.5) & (py >= -0.5) & (py <= h - 0.5)
    pts = np.column_stack([px[keep], py[keep]])
    order = np.lexsort((pts[:, 0], pts[:, 1]))
    return pts[order]


def make_lattice(a: tuple[float, float], b: tuple[float, float],
                 shape: tuple[int, int], cost: float | None = None) -> Lattice:
    """Construct the lattice anchored at (a, b) with its in-bounds points."""
    spacing = math.hypot(b[0] - a[0], b[1] - a[1])
    if spacing < 1e-12:
        raise ValueError("anchor points coincide; lattice spacing is zero")
    pts = lattice_points(a, b, shape)
    return Lattice(anchor_a=(float(a[0]), float(a[1])),
                   anchor_b=(float(b[0]), float(b[1])),
                   spacing=spacing, points=pts, cost=cost)


def default_radius(spacing: float) -> int:
    """Disk radius used to rasterize a lattice of the given spacing."""
    return max(3, _round_half_up(spacing / 8.0))


def render_lattice(lattice: Lattice, shape: tuple[int, int],
                   radius: float) -> np.ndarray:
    """Stamp a closed disk at every lattice point; {0, 1} float map.

    Radius 0 stamps the rounded center pixel, so the rendered sum equals
    the point count.
    """
    if lattice.spacing < 1e-12:
        raise ValueError("lattice spacing is zero")
    w, h = shape
    painted = _backend.paint_disks((h, w), lattice.points, radius)
    return painted.astype(np.float64)


def lattice_cost(pmap, rendered: np.ndarray, weights: CostWeights) -> float:
    """Pixelwise cost sum of w_fp*(o-l)*(1-l) + w_fn*(l-o)*l."""
    o = pmap.data if isinstance(pmap, ProbabilityMap) else np.asarray(pmap)
    l = np.asarray(rendered, dtype=np.float64)
    if o.shape != l.shape:
        raise ValueError(f"map shape {o.shape} != lattice shape {l.shape}")
    fp_term = float(((o - l) * (1.0 - l)).sum())
    fn_term = float(((l - o) * l).sum())
    return weights.w_fp * fp_term + weights.w_fn * fn_term


def fit_lattice(pmap: ProbabilityMap, params: FitParams = FitParams()) -> Lattice:
    """Minimum-cost lattice over all candidate anchor pairs.

    Candidate costs use the binary identity
        cost = w_fp * (total_prob - S) + w_fn * (M - S)
    where S and M are the probability sum and pixel count of the rendered
    disk union; the winner's cost is then re-evaluated through
    render_lattice + lattice_cost. Ties break by smaller spacing, then
    lexicographic anchor coordinates.
    """
    cents = extract_centroids(pmap, params.threshold, params.min_region)
    pairs = candidate_anchor_pairs(cents, params.k)
    shape = (pmap.width, pmap.height)
    total_prob = float(pmap.data.sum())
    summer = _backend.DiskSummer(pmap.data)
    w_fp, w_fn = params.weights.w_fp, params.weights.w_fn

    best = None
    for ca, cb in pairs:
        a = (ca.x, ca.y)
        b = (cb.x, cb.y)
        spacing = math.hypot(b[0] - a[0], b[1] - a[1])
        if spacing < _MIN_PAIR_SPACING:
            continue
        radius = params.radius if params.radius is not None \
            else default_radius(spacing)
        pts = lattice_points(a, b, shape)
        s, m = summer(pts, radius)
        cost = w_fp * (total_prob - s) + w_fn * (m - s)
        key = (cost, spacing, a[0], a[1], b[0], b[1])
        if best is None or key < best[0]:
            best = (key, a, b, radius)
    if best is None:
        raise ValueError(
            "no usable anchor pairs (all candidates below minimum spacing)"
        )
    _, a, b, radius = best
    lattice = make_lattice(a, b, shape)
    rendered = render_lattice(lattice, shape, radius)
    final_cost = lattice_cost(pmap, rendered, params.weights)
    return Lattice(anchor_a=lattice.anchor_a, anchor_b=lattice.anchor_b,
                   spacing=lattice.spacing, points=lattice.points,
                   cost=final_cost)


def lattice_crops(lattice: Lattice, img: GrayImage, pmap: ProbabilityMap,
                  margin: float = 60.0,
                  prob_threshold: float | None = 0.5) -> list[HoleCrop]:
    """Square crops of side spacing - margin at fully-inside lattice points.

    prob_sum is the probability mass inside each crop box; when
    prob_threshold is given, only crops with prob_sum > threshold survive.
    """
    if lattice.spacing <= margin:
        raise GeometryError(
            f"crop margin {margin} leaves no area at spacing {lattice.spacing}"
        )
    if img.data.shape != pmap.data.shape:
        raise ValueError("image and probability map shapes differ")
    side = lattice.spacing - margin
    side_px = _round_half_up(side)
    h, w = img.data.shape
    crops = []
    for x, y in lattice.points:
        x0 = _round_half_up(float(x) - side / 2.0)
        y0 = _round_half_up(float(y) - side / 2.0)
        if x0 < 0 or y0 < 0 or x0 + side_px > w or y0 + side_px > h:
            continue
        prob_sum = float(pmap.data[y0:y0 + side_px, x0:x0 + side_px].sum())
        if prob_threshold is not None and not prob_sum > prob_threshold:
            continue
        block = img.data[y0:y0 + side_px, x0:x0 + side_px].copy()
        crops.append(HoleCrop(
            center=(float(x), float(y)), side=float(side), prob_sum=prob_sum,
            pixels=GrayImage(width=side_px, height=side_px, data=block,
                             id=img.id, pixel_size=img.pixel_size),
        ))
    return crops


def crop_regions(crops: list[HoleCrop]) -> list[Region]:
    """Square evaluation regions matching the crops' footprints."""
    return [Region(kind="square", center=c.center, size=c.side,
                   source="lattice_crop") for c in crops]


def centroid_regions(cents: list[Centroid], radius: float = 50.0) -> list[Region]:
    """Closed circles around raw centroids (detector-only evaluation)."""
    return [Region(kind="circle", center=(c.x, c.y), size=radius,
                   source="centroid_circle") for c in cents]

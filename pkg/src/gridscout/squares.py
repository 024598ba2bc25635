"""Convex hulls, shared-angle minimum bounding rectangles, and crops.

All detected regions in one image share a single grid angle theta; the
angle is chosen to minimize the summed area of the theta-aligned bounding
rectangles, scanned coarsely then refined with bounded scalar optimization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import fminbound

from . import _backend
from .imgio import GrayImage
from .segment import (PixelComponent, classify_pixels, connected_components,
                      fit_poisson_mixture)


@dataclass(frozen=True)
class ConvexPolygon:
    """Strictly convex polygon; vertices (N, 2) float64, counter-clockwise."""

    vertices: np.ndarray


@dataclass(frozen=True)
class RotatedRect:
    """Rectangle centred at `center`, rotated by `theta` degrees.

    theta lives in [0, 90) for rects produced here; the 90-degree symmetry
    of the search makes wider angles redundant.
    """

    center: tuple[float, float]
    width: float
    height: float
    theta: float

    @property
    def area(self) -> float:
        return self.width * self.height

    def corners(self) -> np.ndarray:
        """(4, 2) corner coordinates in order, counter-clockwise."""
        rad = math.radians(self.theta)
        c, s = math.cos(rad), math.sin(rad)
        hw, hh = self.width / 2.0, self.height / 2.0
        local = np.array([[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.asarray(self.center)

    def contains(self, x: float, y: float, tol: float = 1e-9) -> bool:
        """Closed containment test in the rect's own frame."""
        rad = math.radians(self.theta)
        c, s = math.cos(rad), math.sin(rad)
        dx = x - self.center[0]
        dy = y - self.center[1]
        u = dx * c + dy * s
        v = -dx * s + dy * c
        return abs(u) <= self.width / 2.0 + tol and abs(v) <= self.height / 2.0 + tol


@dataclass(frozen=True)
class AngleSolution:
    """Shared angle plus the per-polygon rectangles aligned to it."""

    theta: float
    total_area: float
    rects: list[RotatedRect]


@dataclass(frozen=True)
class SquareCrop:
    """Axis-aligned resampling of one detected rectangle."""

    pixels: GrayImage
    source_rect: RotatedRect
    image_id: str = ""
    label: bool | None = None


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(component: PixelComponent) -> ConvexPolygon:
    """Monotone-chain hull of the component's pixel centers.

    Collinear components (including single pixels) are widened by 0.5 px
    perpendicular to their axis so every hull is a strictly convex polygon.
    """
    pts = np.asarray(component.pixels, dtype=np.float64)
    if pts.size == 0:
        raise ValueError("component has no pixels")
    pts = np.unique(pts, axis=0)
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]
    if pts.shape[0] >= 3:
        lower: list[np.ndarray] = []
        for p in pts:
            while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
                lower.pop()
            lower.append(p)
        upper: list[np.ndarray] = []
        for p in pts[::-1]:
            while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
                upper.pop()
            upper.append(p)
        hull = np.array(lower[:-1] + upper[:-1])
        if hull.shape[0] >= 3:
            return ConvexPolygon(vertices=hull)
        pts = hull  # everything collinear; fall through to widening
    # degenerate: 1 or 2 extreme points define a segment (or a single pixel)
    p0, p1 = pts[0], pts[-1]
    direction = p1 - p0
    norm = float(np.hypot(*direction))
    if norm < 1e-12:
        n = np.array([0.0, 0.5])
        d = np.array([0.5, 0.0])
        p1 = p0
    else:
        unit = direction / norm
        n = 0.5 * np.array([-unit[1], unit[0]])
        d = np.zeros(2)
    verts = np.array([p0 - n - d, p1 - n + d, p1 + n + d, p0 + n - d])
    if _polygon_area(verts) < 0:
        verts = verts[::-1]
    return ConvexPolygon(vertices=verts)


def _polygon_area(verts: np.ndarray) -> float:
    x, y = verts[:, 0], verts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def min_rect_at_angle(poly: ConvexPolygon, theta: float) -> RotatedRect:
    """Smallest rectangle aligned at `theta` degrees containing the polygon.

    Rotate the vertices by -theta, take the axis-aligned bounding box, and
    rotate its center back. theta is reduced modulo 90 first; the aligned
    rectangle family repeats with that period.
    """
    t = float(theta) % 90.0
    rad = math.radians(t)
    c, s = math.cos(rad), math.sin(rad)
    v = poly.vertices
    xr = v[:, 0] * c + v[:, 1] * s
    yr = -v[:, 0] * s + v[:, 1] * c
    x0, x1 = float(xr.min()), float(xr.max())
    y0, y1 = float(yr.min()), float(yr.max())
    cxr, cyr = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    cx = cxr * c - cyr * s
    cy = cxr * s + cyr * c
    return RotatedRect(center=(cx, cy), width=x1 - x0, height=y1 - y0, theta=t)


def total_rect_area(polys: list[ConvexPolygon], theta: float) -> float:
    """Objective for the shared-angle search."""
    return sum(min_rect_at_angle(p, theta).area for p in polys)


def optimize_grid_angle(polys: list[ConvexPolygon]) -> AngleSolution:
    """Shared angle minimizing total rectangle area.

    Coarse 1-degree scan over [0, 90) picks a bracket; bounded Brent
    refinement searches within +/-1 degree of it. The refined angle is kept
    only if it beats the coarse sample, so the result never regresses.
    """
    if not polys:
        raise ValueError("need at least one polygon")

    coarse = np.arange(0.0, 90.0, 1.0)
    areas = np.array([total_rect_area(polys, t) for t in coarse])
    best_i = int(np.argmin(areas))
    best_t, best_a = float(coarse[best_i]), float(areas[best_i])

    refined_t = float(fminbound(lambda t: total_rect_area(polys, t),
                                best_t - 1.0, best_t + 1.0, xtol=1e-5))
    refined_a = total_rect_area(polys, refined_t)
    if refined_a <= best_a:
        theta = refined_t % 90.0
    else:
        theta = best_t
    rects = [min_rect_at_angle(p, theta) for p in polys]
    return AngleSolution(theta=theta, total_area=sum(r.area for r in rects),
                         rects=rects)


def detect_squares(img: GrayImage, em_tol: float = 1e-6,
                   em_max_iters: int = 100, connectivity: int = 4,
                   min_component: int | None = None) -> AngleSolution:
    """Full low-mag detection: mixture fit, mask, components, hulls, angle."""
    mixture = fit_poisson_mixture(img, tol=em_tol, max_iters=em_max_iters)
    mask = classify_pixels(img, mixture)
    components = connected_components(mask, connectivity=connectivity,
                                      min_size=min_component)
    if not components:
        return AngleSolution(theta=0.0, total_area=0.0, rects=[])
    hulls = [convex_hull(c) for c in components]
    return optimize_grid_angle(hulls)


def crop_square(img: GrayImage, rect: RotatedRect) -> SquareCrop:
    """Resample the rectangle into an axis-aligned crop.

    Bilinear sampling along the rect's own axes; out-of-bounds samples take
    the whole-image mean. Output dimensions are round(width) x round(height).
    """
    w = int(math.floor(rect.width + 0.5))
    h = int(math.floor(rect.height + 0.5))
    if w <= 0 or h <= 0:
        raise ValueError(f"rect has zero crop area ({rect.width} x {rect.height})")
    fill = float(img.data.mean())
    out = _backend.bilinear_crop(img.data, rect.center[0], rect.center[1],
                                 w, h, math.radians(rect.theta), fill)
    crop_img = GrayImage(width=w, height=h, data=out, id=img.id,
                         pixel_size=img.pixel_size)
    return SquareCrop(pixels=crop_img, source_rect=rect, image_id=img.id)

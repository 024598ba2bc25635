import math

import numpy as np
import pytest

from gridscout.segment import PixelComponent
from gridscout.squares import (ConvexPolygon, RotatedRect, convex_hull,
                               crop_square, min_rect_at_angle,
                               optimize_grid_angle, total_rect_area)

from conftest import as_image


def component(pixels) -> PixelComponent:
    arr = np.asarray(pixels, dtype=np.int64)
    return PixelComponent(pixels=arr, size=arr.shape[0])


def square_poly(cx, cy, side, theta_deg) -> ConvexPolygon:
    rad = math.radians(theta_deg)
    c, s = math.cos(rad), math.sin(rad)
    half = side / 2.0
    local = np.array([[-half, -half], [half, -half], [half, half],
                      [-half, half]])
    rot = np.array([[c, -s], [s, c]])
    return ConvexPolygon(vertices=local @ rot.T + np.array([cx, cy]))


def point_in_convex(poly: ConvexPolygon, x, y, tol=1e-9) -> bool:
    v = poly.vertices
    n = v.shape[0]
    for i in range(n):
        ax, ay = v[i]
        bx, by = v[(i + 1) % n]
        if (bx - ax) * (y - ay) - (by - ay) * (x - ax) < -tol:
            return False
    return True


# ---------------------------------------------------------------------------
# convex hull


def test_hull_of_solid_block():
    pix = [(x, y) for y in range(3) for x in range(3)]
    hull = convex_hull(component(pix))
    assert {tuple(v) for v in hull.vertices} == \
        {(0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0)}
    # counter-clockwise: positive signed area
    v = hull.vertices
    area2 = np.dot(v[:, 0], np.roll(v[:, 1], -1)) - \
        np.dot(v[:, 1], np.roll(v[:, 0], -1))
    assert area2 > 0


def test_hull_collinear_widened():
    hull = convex_hull(component([(1, 1), (2, 1), (3, 1), (4, 1)]))
    assert hull.vertices.shape[0] >= 3
    rect = min_rect_at_angle(hull, 0.0)
    assert rect.height == pytest.approx(1.0)
    assert rect.width == pytest.approx(3.0)


def test_hull_single_pixel_unit_square():
    hull = convex_hull(component([(5, 7)]))
    rect = min_rect_at_angle(hull, 0.0)
    assert rect.width == pytest.approx(1.0)
    assert rect.height == pytest.approx(1.0)
    assert rect.center == (pytest.approx(5.0), pytest.approx(7.0))


def test_hull_contains_every_pixel(rng):
    pix = np.unique(rng.integers(0, 40, (200, 2)), axis=0)
    hull = convex_hull(component(pix))
    for x, y in pix:
        assert point_in_convex(hull, float(x), float(y), tol=1e-9)


def test_hull_empty_component_errors():
    with pytest.raises(ValueError):
        convex_hull(component(np.empty((0, 2), dtype=np.int64)))


# ---------------------------------------------------------------------------
# rectangles


def test_min_rect_unit_square_axis_aligned():
    poly = square_poly(0.5, 0.5, 1.0, 0.0)
    assert min_rect_at_angle(poly, 0.0).area == pytest.approx(1.0)


def test_min_rect_unit_square_45deg():
    poly = square_poly(0.0, 0.0, 1.0, 0.0)
    rect = min_rect_at_angle(poly, 45.0)
    assert rect.area == pytest.approx(2.0)
    assert rect.width == pytest.approx(math.sqrt(2.0))


def test_min_rect_periodicity_exact(rng):
    pix = rng.integers(0, 30, (40, 2))
    hull = convex_hull(component(np.unique(pix, axis=0)))
    # dyadic angles so theta + 90 is exact and the mod-90 fold is bitwise
    for theta in (3.0, 17.5, 61.25):
        a1 = min_rect_at_angle(hull, theta).area
        a2 = min_rect_at_angle(hull, theta + 90.0).area
        assert a1 == a2


def test_min_rect_contains_polygon(rng):
    pix = np.unique(rng.integers(0, 50, (60, 2)), axis=0)
    hull = convex_hull(component(pix))
    for theta in (0.0, 10.0, 33.3, 80.0):
        rect = min_rect_at_angle(hull, theta)
        for x, y in hull.vertices:
            assert rect.contains(x, y, tol=1e-6)


# ---------------------------------------------------------------------------
# shared-angle optimization


def test_optimize_recovers_planted_angle(rng):
    polys = []
    for _ in range(6):
        cx, cy = rng.uniform(100, 900, 2)
        side = rng.uniform(80, 120)
        polys.append(square_poly(cx, cy, side, 17.0))
    sol = optimize_grid_angle(polys)
    assert abs(sol.theta - 17.0) < 0.5
    assert sol.total_area == pytest.approx(
        sum(r.area for r in sol.rects), rel=1e-12)
    for rect in sol.rects:
        assert rect.theta == sol.theta


def test_optimize_never_exceeds_coarse_probe():
    poly = square_poly(50.0, 50.0, 20.0, 0.0)
    sol = optimize_grid_angle([poly])
    assert sol.total_area <= total_rect_area([poly], 0.0) + 1e-9


def test_optimize_matches_fine_brute_force(rng):
    for trial in range(20):
        polys = []
        planted = rng.uniform(0, 90)
        for _ in range(4):
            cx, cy = rng.uniform(50, 450, 2)
            side = rng.uniform(30, 60)
            polys.append(square_poly(cx, cy, side, planted))
        sol = optimize_grid_angle(polys)
        grid = np.arange(0.0, 90.0, 0.01)
        areas = np.array([total_rect_area(polys, t) for t in grid])
        best = grid[int(np.argmin(areas))]
        diff = abs(sol.theta - best)
        diff = min(diff, 90.0 - diff)  # wrap-around distance
        assert diff < 0.1
        assert sol.total_area <= areas.min() + 1e-9


def test_optimize_empty_errors():
    with pytest.raises(ValueError):
        optimize_grid_angle([])


# ---------------------------------------------------------------------------
# crops


def test_crop_axis_aligned_exact_copy(rng):
    data = rng.random((30, 30))
    img = as_image(data)
    rect = RotatedRect(center=(14.5, 9.5), width=10, height=8, theta=0.0)
    crop = crop_square(img, rect)
    assert np.array_equal(crop.pixels.data, data[6:14, 10:20])


def test_crop_constant_image():
    img = as_image(np.full((20, 20), 3.5))
    rect = RotatedRect(center=(10.0, 10.0), width=7, height=5, theta=31.0)
    crop = crop_square(img, rect)
    assert np.allclose(crop.pixels.data, 3.5)


def test_crop_at_90_matches_rot90(rng):
    data = rng.random((40, 40))
    img = as_image(data)
    cx, cy = 17.3, 22.8
    rect90 = RotatedRect(center=(cx, cy), width=12, height=9, theta=90.0)
    crop90 = crop_square(img, rect90)
    rot = as_image(np.rot90(data).copy())
    w = data.shape[1]
    rect0 = RotatedRect(center=(cy, w - 1 - cx), width=12, height=9, theta=0.0)
    crop0 = crop_square(rot, rect0)
    assert np.allclose(crop90.pixels.data, crop0.pixels.data, atol=1e-6)


def test_crop_fill_is_image_mean():
    data = np.zeros((10, 10))
    data[0, 0] = 100.0
    img = as_image(data)
    rect = RotatedRect(center=(20.0, 5.0), width=4, height=4, theta=0.0)
    crop = crop_square(img, rect)
    assert np.allclose(crop.pixels.data, 1.0)


def test_crop_zero_area_errors():
    img = as_image(np.ones((5, 5)))
    with pytest.raises(ValueError):
        crop_square(img, RotatedRect(center=(2, 2), width=0.2, height=3,
                                     theta=0.0))

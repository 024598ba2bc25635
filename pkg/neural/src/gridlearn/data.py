"""Array-side data handling shared by the trainers and the CLI.

Images are standardized per image, targets are sparse indicator maps
built from pixel picks, and predicted maps are reduced back to centroid
lists for comparison against truth sidecars.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage


def standardize(image: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance copy of `image` as float32.

    Population standard deviation; a near-constant image maps to zeros
    instead of exploding.
    """
    data = np.asarray(image, dtype=np.float64)
    mean = data.mean()
    std = data.std()
    if std < 1e-12:
        return np.zeros(data.shape, dtype=np.float32)
    return ((data - mean) / std).astype(np.float32)


def build_target(shape: tuple[int, int], points: np.ndarray) -> np.ndarray:
    """Indicator map with a single unit pixel per picked point.

    `points` holds x, y coordinates; each is rounded to the nearest pixel
    and must land inside `shape`.  With no points the map is all zero, so
    the target sums to the number of picks.
    """
    height, width = shape
    target = np.zeros((height, width), dtype=np.float32)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    for x, y in points:
        col = int(round(x))
        row = int(round(y))
        if not (0 <= col < width and 0 <= row < height):
            raise ValueError(
                f"pick ({x}, {y}) falls outside a {width} x {height} image"
            )
        target[row, col] = 1.0
    return target


def extract_centroids(pmap: np.ndarray, threshold: float = 0.5,
                      min_area: int = 4) -> np.ndarray:
    """Probability-weighted centroids of connected blobs above `threshold`.

    Components smaller than `min_area` pixels are dropped as speckle.
    Returns x, y coordinates of shape (n, 2), ordered by component label.
    """
    pmap = np.asarray(pmap, dtype=np.float64)
    mask = pmap > threshold
    labels, count = ndimage.label(mask)
    if count == 0:
        return np.zeros((0, 2), dtype=np.float64)
    sizes = ndimage.sum_labels(mask, labels, index=np.arange(1, count + 1))
    keep = np.flatnonzero(sizes >= min_area) + 1
    if keep.size == 0:
        return np.zeros((0, 2), dtype=np.float64)
    centers = ndimage.center_of_mass(pmap, labels, index=keep)
    return np.asarray([(c, r) for r, c in centers], dtype=np.float64)


def point_recall(found: np.ndarray, truth: np.ndarray, tol: float) -> float:
    """Fraction of truth points with some found point within `tol` pixels."""
    truth = np.asarray(truth, dtype=np.float64).reshape(-1, 2)
    found = np.asarray(found, dtype=np.float64).reshape(-1, 2)
    if len(truth) == 0:
        return 1.0
    if len(found) == 0:
        return 0.0
    diff = truth[:, None, :] - found[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    return float((dist.min(axis=1) <= tol).mean())


def make_crop_fixtures(count: int, seed: int,
                       sizes: tuple[int, ...] = (40, 72)
                       ) -> tuple[list[np.ndarray], np.ndarray]:
    """Synthetic hole crops for classifier training and evaluation.

    Each crop is a Poisson-noised bright disk on a dim background.  Clean
    crops (label 1) keep the disk uniform; contaminated crops (label 0)
    get 2 to 4 small dark clutter blobs stamped over the disk.  Sizes
    alternate through `sizes` so every batch mixes crop shapes.
    """
    rng = np.random.default_rng(seed)
    crops = []
    labels = np.zeros(count, dtype=np.int64)
    for k in range(count):
        size = sizes[k % len(sizes)]
        clean = k % 2 == 0
        labels[k] = int(clean)
        yy, xx = np.mgrid[0:size, 0:size]
        cx = size / 2 + rng.uniform(-2.0, 2.0)
        cy = size / 2 + rng.uniform(-2.0, 2.0)
        radius = size * rng.uniform(0.28, 0.34)
        rate = np.full((size, size), 30.0)
        disk = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius ** 2
        rate[disk] = 90.0
        if not clean:
            for _ in range(rng.integers(2, 5)):
                # clutter sits inside the hole so only texture separates
                # the classes, not the overall intensity histogram
                ang = rng.uniform(0.0, 2 * np.pi)
                rad = rng.uniform(0.0, 0.7) * radius
                bx = cx + rad * np.cos(ang)
                by = cy + rad * np.sin(ang)
                br = radius * rng.uniform(0.2, 0.35)
                blob = (xx - bx) ** 2 + (yy - by) ** 2 <= br ** 2
                rate[blob] = 40.0
        crops.append(rng.poisson(rate).astype(np.float64))
    return crops, labels

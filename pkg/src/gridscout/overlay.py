"""Score-colored overlay rendering for detected rectangles and lattices.

Scores map onto a six-stop ramp running red (worst) through orange, yellow,
white, and light blue up to dark blue (best).
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image as PILImage
from PIL import ImageDraw

from .imgio import GrayImage, atomic_write_bytes

# ramp stops from score 0 to score 1
_RAMP = (
    (255, 0, 0),      # red
    (255, 165, 0),    # orange
    (255, 255, 0),    # yellow
    (255, 255, 255),  # white
    (173, 216, 230),  # light blue
    (0, 0, 139),      # dark blue
)


def score_color(score: float) -> tuple[int, int, int]:
    """Piecewise-linear interpolation along the ramp; score clamped to [0, 1]."""
    t = min(max(float(score), 0.0), 1.0) * (len(_RAMP) - 1)
    i = min(int(t), len(_RAMP) - 2)
    frac = t - i
    lo, hi = _RAMP[i], _RAMP[i + 1]
    return tuple(int(round(l + (h - l) * frac)) for l, h in zip(lo, hi))


def to_rgb(img: GrayImage) -> PILImage.Image:
    """Min/max-stretch the image to 8-bit and convert to RGB."""
    data = img.data
    lo, hi = float(data.min()), float(data.max())
    if hi - lo < 1e-12:
        scaled = np.zeros_like(data)
    else:
        scaled = (data - lo) / (hi - lo) * 255.0
    return PILImage.fromarray(scaled.astype(np.uint8), mode="L").convert("RGB")


def draw_rects(img: GrayImage, rects, scores=None,
               width: int = 2) -> PILImage.Image:
    """Outline each rect; colored by score when scores are given."""
    canvas = to_rgb(img)
    draw = ImageDraw.Draw(canvas)
    for i, rect in enumerate(rects):
        color = score_color(scores[i]) if scores is not None else (0, 200, 0)
        corners = [tuple(p) for p in rect.corners()]
        draw.polygon(corners, outline=color, width=width)
    return canvas


def draw_lattice(img: GrayImage, points, radius: float,
                 boxes=None) -> PILImage.Image:
    """Mark lattice points as circles and optional crops as green boxes."""
    canvas = to_rgb(img)
    draw = ImageDraw.Draw(canvas)
    for x, y in points:
        draw.ellipse([x - radius, y - radius, x + radius, y + radius],
                     outline=(255, 165, 0), width=2)
    if boxes is not None:
        for crop in boxes:
            half = crop.side / 2.0
            cx, cy = crop.center
            draw.rectangle([cx - half, cy - half, cx + half, cy + half],
                           outline=(0, 200, 0), width=2)
    return canvas


def save_overlay(canvas: PILImage.Image, path) -> None:
    buf = io.BytesIO()
    canvas.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())

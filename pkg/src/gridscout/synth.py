"""Synthetic low-mag and medium-mag fixtures with exact ground truth.

Low-mag images are rotated grids of bright squares over a dark background,
with per-pixel Poisson noise so the two intensity classes really follow the
segmentation model. Medium-mag images carry holes on an exact square
lattice; the paired "ideal" probability map emulates a hole detector,
including misses (deleted holes) and spurious detections.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import GeometryError
from .evalmatch import Selection, save_selections
from .imgio import GrayImage, ProbabilityMap, atomic_write_bytes, save_image, save_pmap
from .lattice import lattice_points

TRUTH_FORMAT = "gridscout-truth"
TRUTH_VERSION = 1


@dataclass(frozen=True)
class LowMagConfig:
    width: int = 1024
    height: int = 1024
    grid_pitch: float = 180.0
    square_size: float = 110.0
    size_jitter: float = 0.15  # each square's side varies by up to this fraction
    angle: float = 0.0
    bg_rate: float = 5.0
    fg_rate: float = 50.0
    broken_fraction: float = 0.0

    def __post_init__(self):
        if not (self.fg_rate > self.bg_rate > 0):
            raise ValueError(
                f"need fg_rate > bg_rate > 0, got ({self.fg_rate}, {self.bg_rate})"
            )
        if not (0 <= self.broken_fraction <= 1):
            raise ValueError("broken_fraction must lie in [0, 1]")
        if self.square_size >= self.grid_pitch:
            raise GeometryError("squares must be smaller than the grid pitch")


@dataclass(frozen=True)
class PlantedSquare:
    x: float
    y: float
    size: float
    broken: bool
    selected: bool


@dataclass(frozen=True)
class LowMagTruth:
    image: GrayImage
    angle: float
    squares: list[PlantedSquare]
    seed: int


@dataclass(frozen=True)
class MedMagConfig:
    width: int = 320
    height: int = 320
    spacing: float = 48.0
    hole_radius: float | None = None  # None: spacing / 3
    delete_frac: float = 0.2
    spurious_blobs: int = 5
    invert: bool = False
    contrast: float = 30.0
    bg_rate: float = 20.0
    lattice_angle: float | None = None  # None: drawn uniformly from [0, 90)

    def resolved_hole_radius(self) -> float:
        return self.spacing / 3.0 if self.hole_radius is None else self.hole_radius

    def __post_init__(self):
        if self.spacing <= 2 * self.resolved_hole_radius():
            raise GeometryError(
                f"spacing {self.spacing} must exceed twice the hole radius "
                f"{self.resolved_hole_radius()}"
            )
        if not (0 <= self.delete_frac <= 1):
            raise ValueError("delete_frac must lie in [0, 1]")
        if self.bg_rate <= 0 or self.contrast <= 0:
            raise ValueError("bg_rate and contrast must be positive")


@dataclass(frozen=True)
class MedMagTruth:
    image: GrayImage
    pmap: ProbabilityMap
    anchor_a: tuple[float, float]
    anchor_b: tuple[float, float]
    spacing: float
    angle: float
    centers: np.ndarray = field(repr=False)  # (N, 2) lattice points in bounds
    interior: np.ndarray = field(repr=False)  # full grid cell inside image
    deleted: np.ndarray = field(repr=False)  # hole absent from the map
    spurious: np.ndarray = field(repr=False)  # (M, 2) off-lattice map blobs
    inverted: bool = False
    seed: int = 0


def gen_lowmag(cfg: LowMagConfig = LowMagConfig(), seed: int = 0) -> LowMagTruth:
    """Render a rotated grid of Poisson-noised squares.

    Broken squares lose one corner quadrant and are marked unselected.
    Truth lists only squares whose full footprint is inside the image.
    """
    rng = np.random.default_rng(seed)
    w, h = cfg.width, cfg.height
    angle = cfg.angle % 90.0
    rad = math.radians(angle)
    ct, st = math.cos(rad), math.sin(rad)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    pitch = cfg.grid_pitch

    # grid-frame origin offset so the lattice phase varies across seeds
    ox, oy = rng.uniform(-pitch / 2.0, pitch / 2.0, size=2)

    half_diag = math.hypot(w, h) / 2.0
    n_cells = int(math.ceil(half_diag / pitch)) + 1
    idx = np.arange(-n_cells, n_cells + 1)
    sizes = cfg.square_size * (
        1.0 + cfg.size_jitter * rng.uniform(-1.0, 1.0, (idx.size, idx.size))
    )
    broken = rng.random((idx.size, idx.size)) < cfg.broken_fraction
    quadrant = rng.integers(0, 4, (idx.size, idx.size))

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    gx = (xx - cx) * ct + (yy - cy) * st - ox
    gy = -(xx - cx) * st + (yy - cy) * ct - oy
    ci = np.rint(gx / pitch).astype(np.int64)
    cj = np.rint(gy / pitch).astype(np.int64)
    dx = gx - ci * pitch
    dy = gy - cj * pitch
    ci_clip = np.clip(ci + n_cells, 0, idx.size - 1)
    cj_clip = np.clip(cj + n_cells, 0, idx.size - 1)
    half = sizes[cj_clip, ci_clip] / 2.0
    inside = (np.abs(dx) <= half) & (np.abs(dy) <= half)
    is_broken = broken[cj_clip, ci_clip]
    q = quadrant[cj_clip, ci_clip]
    in_quadrant = ((q == 0) & (dx > 0) & (dy > 0)) | \
                  ((q == 1) & (dx < 0) & (dy > 0)) | \
                  ((q == 2) & (dx < 0) & (dy < 0)) | \
                  ((q == 3) & (dx > 0) & (dy < 0))
    inside &= ~(is_broken & in_quadrant)

    rate = np.where(inside, cfg.fg_rate, cfg.bg_rate)
    data = rng.poisson(rate).astype(np.float64)
    image = GrayImage(width=w, height=h, data=data, id=f"lowmag-{seed}")

    squares = []
    for j_pos, j in enumerate(idx):
        for i_pos, i in enumerate(idx):
            gx0 = ox + i * pitch
            gy0 = oy + j * pitch
            px = cx + gx0 * ct - gy0 * st
            py = cy + gx0 * st + gy0 * ct
            s = float(sizes[j_pos, i_pos])
            reach = s / 2.0 * (abs(ct) + abs(st))
            if px - reach < 1 or px + reach > w - 2 or \
                    py - reach < 1 or py + reach > h - 2:
                continue
            b = bool(broken[j_pos, i_pos])
            squares.append(PlantedSquare(x=float(px), y=float(py), size=s,
                                         broken=b, selected=not b))
    return LowMagTruth(image=image, angle=angle, squares=squares, seed=seed)


def _paint_gaussian_max(canvas: np.ndarray, cx: float, cy: float,
                        sigma: float) -> None:
    """Max-combine a unit-height Gaussian bump into the canvas."""
    h, w = canvas.shape
    reach = int(math.ceil(4.0 * sigma))
    x0 = max(int(math.floor(cx)) - reach, 0)
    x1 = min(int(math.ceil(cx)) + reach, w - 1)
    y0 = max(int(math.floor(cy)) - reach, 0)
    y1 = min(int(math.ceil(cy)) + reach, h - 1)
    if x1 < x0 or y1 < y0:
        return
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    bump = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma * sigma))
    np.maximum(canvas[y0:y1 + 1, x0:x1 + 1], bump,
               out=canvas[y0:y1 + 1, x0:x1 + 1])


def gen_medmag(cfg: MedMagConfig = MedMagConfig(), seed: int = 0) -> MedMagTruth:
    """Render holes on an exact lattice plus the detector-style ideal map.

    Every in-bounds lattice point gets a physical hole in the image.
    The map carries a Gaussian blob (sigma = hole_radius / 3) at each
    non-deleted hole whose blob fits fully inside, plus the spurious blobs;
    deleted holes exist in the image but not in the map, emulating detector
    misses. Spurious blobs appear in both.
    """
    rng = np.random.default_rng(seed)
    w, h = cfg.width, cfg.height
    d = cfg.spacing
    hole_radius = cfg.resolved_hole_radius()
    sigma = hole_radius / 3.0

    angle = cfg.lattice_angle if cfg.lattice_angle is not None \
        else float(rng.uniform(0.0, 90.0))
    rad = math.radians(angle % 90.0)
    ax = (w - 1) / 2.0 + float(rng.uniform(-d / 2.0, d / 2.0))
    ay = (h - 1) / 2.0 + float(rng.uniform(-d / 2.0, d / 2.0))
    a = (ax, ay)
    b = (ax + d * math.cos(rad), ay + d * math.sin(rad))
    centers = lattice_points(a, b, (w, h))
    n = centers.shape[0]

    margin = d / 2.0 + 2.0
    interior = (centers[:, 0] >= margin) & (centers[:, 0] <= w - 1 - margin) & \
               (centers[:, 1] >= margin) & (centers[:, 1] <= h - 1 - margin)
    deleted = rng.random(n) < cfg.delete_frac

    spurious = []
    min_gap = 0.45 * d
    attempts = 0
    while len(spurious) < cfg.spurious_blobs and attempts < 1000 * (cfg.spurious_blobs + 1):
        attempts += 1
        px = float(rng.uniform(hole_radius, w - 1 - hole_radius))
        py = float(rng.uniform(hole_radius, h - 1 - hole_radius))
        gaps = np.hypot(centers[:, 0] - px, centers[:, 1] - py)
        if gaps.size and gaps.min() < min_gap:
            continue
        spurious.append((px, py))
    spurious = np.array(spurious, dtype=np.float64).reshape(-1, 2)

    # physical holes: anti-aliased disks raising the Poisson rate
    rate = np.full((h, w), cfg.bg_rate, dtype=np.float64)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    hole_sites = np.vstack([centers, spurious])
    for hx, hy in hole_sites:
        reach = int(math.ceil(hole_radius)) + 2
        x0 = max(int(hx) - reach, 0)
        x1 = min(int(hx) + reach, w - 1)
        y0 = max(int(hy) - reach, 0)
        y1 = min(int(hy) + reach, h - 1)
        if x1 < x0 or y1 < y0:
            continue
        dist = np.hypot(xx[y0:y1 + 1, x0:x1 + 1] - hx,
                        yy[y0:y1 + 1, x0:x1 + 1] - hy)
        profile = np.clip(hole_radius - dist, 0.0, 1.0)
        patch = rate[y0:y1 + 1, x0:x1 + 1]
        np.maximum(patch, cfg.bg_rate + cfg.contrast * profile, out=patch)

    data = rng.poisson(rate).astype(np.float64)
    if cfg.invert:
        data = data.max() - data

    # map blobs: only holes the emulated detector "found", with full support
    support = math.ceil(sigma * math.sqrt(2.0 * math.log(2.0))) + 2
    supported = (centers[:, 0] >= support) & (centers[:, 0] <= w - 1 - support) & \
                (centers[:, 1] >= support) & (centers[:, 1] <= h - 1 - support)
    prob = np.zeros((h, w), dtype=np.float64)
    for k in range(n):
        if supported[k] and not deleted[k]:
            _paint_gaussian_max(prob, centers[k, 0], centers[k, 1], sigma)
    for sx, sy in spurious:
        _paint_gaussian_max(prob, sx, sy, sigma)

    image = GrayImage(width=w, height=h, data=data, id=f"medmag-{seed}")
    pmap = ProbabilityMap(width=w, height=h, data=np.clip(prob, 0.0, 1.0))
    return MedMagTruth(image=image, pmap=pmap, anchor_a=a, anchor_b=b,
                       spacing=d, angle=angle % 90.0, centers=centers,
                       interior=interior, deleted=deleted, spurious=spurious,
                       inverted=cfg.invert, seed=seed)


def gen_hole_selections(truth: MedMagTruth, seed: int,
                        frac_detected: float = 0.7,
                        frac_deleted: float = 0.2,
                        jitter: float = 1.5) -> list[tuple[float, float]]:
    """Operator-style picks near interior hole centers.

    Holes the emulated detector found are picked with probability
    frac_detected; holes it missed (deleted from the map) are dimmer or
    contaminated in practice, so operators pick them at the lower
    frac_deleted rate. Picks jitter around the true center.
    """
    rng = np.random.default_rng(seed)
    out = []
    w, h = truth.image.width, truth.image.height
    for k in range(truth.centers.shape[0]):
        if not truth.interior[k]:
            continue
        p = frac_deleted if truth.deleted[k] else frac_detected
        if rng.random() >= p:
            continue
        x = float(np.clip(truth.centers[k, 0] + rng.normal(0.0, jitter), 0, w - 1))
        y = float(np.clip(truth.centers[k, 1] + rng.normal(0.0, jitter), 0, h - 1))
        out.append((x, y))
    return out


# ---------------------------------------------------------------------------
# Dataset directory layout: {root}/{session_id}/{image_id}.{mrc,pmap,json}
# plus {root}/selections.csv


def _truth_json_lowmag(truth: LowMagTruth) -> dict:
    return {
        "format": TRUTH_FORMAT, "version": TRUTH_VERSION, "kind": "lowmag",
        "angle": truth.angle, "seed": truth.seed,
        "squares": [asdict(s) for s in truth.squares],
    }


def _truth_json_medmag(truth: MedMagTruth) -> dict:
    return {
        "format": TRUTH_FORMAT, "version": TRUTH_VERSION, "kind": "medmag",
        "anchor_a": list(truth.anchor_a), "anchor_b": list(truth.anchor_b),
        "spacing": truth.spacing, "angle": truth.angle,
        "inverted": truth.inverted, "seed": truth.seed,
        "centers": truth.centers.tolist(),
        "interior": truth.interior.astype(int).tolist(),
        "deleted": truth.deleted.astype(int).tolist(),
        "spurious": truth.spurious.tolist(),
    }


def _write_json(path: str, doc: dict) -> None:
    payload = json.dumps(doc, indent=2, sort_keys=True).encode("ascii")
    atomic_write_bytes(path, payload + b"\n")


def make_dataset(root: str | os.PathLike, kind: str = "medmag",
                 sessions: int = 10, images_per_session: int = 10,
                 cfg=None, seed: int = 0,
                 frac_detected: float = 0.7, frac_deleted: float = 0.2) -> dict:
    """Write a multi-session dataset of images, maps, truth, and selections.

    Returns a manifest dict: {"sessions": [...], "images": [image ids],
    "selections": count}. Fully deterministic from (cfg, seed).
    """
    root = os.fspath(root)
    if kind not in ("lowmag", "medmag"):
        raise ValueError(f"kind must be lowmag or medmag, got {kind!r}")
    if cfg is None:
        cfg = LowMagConfig() if kind == "lowmag" else MedMagConfig()
    master = np.random.default_rng(seed)
    selections = []
    image_ids = []
    session_ids = []
    for s in range(sessions):
        session_id = f"s{s:02d}"
        session_ids.append(session_id)
        session_dir = os.path.join(root, session_id)
        os.makedirs(session_dir, exist_ok=True)
        for i in range(images_per_session):
            image_id = f"{session_id}_i{i:02d}"
            image_ids.append(image_id)
            child = int(master.integers(0, 2 ** 62))
            base = os.path.join(session_dir, image_id)
            if kind == "lowmag":
                truth = gen_lowmag(cfg, child)
                img = replace(truth.image, id=image_id)
                save_image(img, base + ".mrc")
                _write_json(base + ".json", _truth_json_lowmag(truth))
                for sq in truth.squares:
                    if sq.selected:
                        selections.append(Selection(
                            x=sq.x, y=sq.y, image_id=image_id,
                            session_id=session_id))
            else:
                truth = gen_medmag(cfg, child)
                img = replace(truth.image, id=image_id)
                save_image(img, base + ".mrc")
                save_pmap(truth.pmap, base + ".pmap")
                _write_json(base + ".json", _truth_json_medmag(truth))
                sel_seed = int(master.integers(0, 2 ** 62))
                for x, y in gen_hole_selections(truth, sel_seed,
                                                frac_detected, frac_deleted):
                    selections.append(Selection(x=x, y=y, image_id=image_id,
                                                session_id=session_id))
    save_selections(selections, os.path.join(root, "selections.csv"))
    manifest = {"format": "gridscout-dataset", "version": 1, "kind": kind,
                "sessions": session_ids, "images": image_ids,
                "selections": len(selections), "seed": seed}
    _write_json(os.path.join(root, "dataset.json"), manifest)
    return manifest

"""Readers and writers for the on-disk dataset interface.

This package talks to the detection pipeline only through files: MRC
images, PMAP probability maps, truth JSON sidecars, a dataset manifest,
and CSV tables.  The parsers here are deliberately minimal and accept
exactly the subset the pipeline emits: little-endian single-section MRC
in modes 0/1/2/6, PMAP version 1, and flat JSON/CSV.
"""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

MRC_HEADER_SIZE = 1024
MRC_MODES = {0: "i1", 1: "<i2", 2: "<f4", 6: "<u2"}


class FormatError(ValueError):
    """A file is not in the expected format."""


def read_mrc(path: str | os.PathLike) -> tuple[np.ndarray, float | None]:
    """Load a single-section MRC image.

    Returns (data, pixel_size) with data float32 of shape (height, width)
    and pixel_size in Angstrom per pixel, or None when the header carries
    no usable cell.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < MRC_HEADER_SIZE:
        raise FormatError(f"{path}: MRC header truncated")
    nx, ny, nz, mode = struct.unpack_from("<4i", raw, 0)
    mx, _, mz = struct.unpack_from("<3i", raw, 28)
    xlen, _, zlen = struct.unpack_from("<3f", raw, 40)
    nsymbt, = struct.unpack_from("<i", raw, 92)
    if raw[212:214] == b"\x11\x11":
        raise FormatError(f"{path}: big-endian MRC is not supported")
    if nz != 1:
        raise FormatError(f"{path}: MRC stacks are not supported (nz = {nz})")
    if mode not in MRC_MODES:
        raise FormatError(f"{path}: unsupported MRC mode {mode}")
    if nx <= 0 or ny <= 0:
        raise FormatError(f"{path}: invalid dimensions {nx} x {ny}")
    dtype = np.dtype(MRC_MODES[mode])
    offset = MRC_HEADER_SIZE + max(nsymbt, 0)
    need = nx * ny * dtype.itemsize
    body = raw[offset:offset + need]
    if len(body) < need:
        raise FormatError(f"{path}: payload truncated")
    data = np.frombuffer(body, dtype=dtype).reshape(ny, nx).astype(np.float32)
    pixel_size = None
    if mz > 0 and zlen > 0:
        pixel_size = float(zlen) / float(mz)
    elif mx > 0 and xlen > 0:
        pixel_size = float(xlen) / float(mx)
    return data, pixel_size


def read_pmap(path: str | os.PathLike) -> np.ndarray:
    """Load a PMAP probability map as float32 of shape (height, width)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != b"PMAP":
        raise FormatError(f"{path}: not a PMAP file")
    if len(raw) < 14:
        raise FormatError(f"{path}: PMAP header truncated")
    version, width, height = struct.unpack_from("<HII", raw, 4)
    if version != 1:
        raise FormatError(f"{path}: unsupported PMAP version {version}")
    need = width * height * 4
    body = raw[14:14 + need]
    if len(body) < need:
        raise FormatError(f"{path}: PMAP payload truncated")
    data = np.frombuffer(body, dtype="<f4").reshape(height, width)
    if not np.isfinite(data).all():
        raise FormatError(f"{path}: PMAP payload contains non-finite values")
    return data.astype(np.float32)


def write_pmap(path: str | os.PathLike, data: np.ndarray) -> None:
    """Write a probability map in PMAP version 1.

    Values are clipped to [0, 1]; non-finite input is rejected so a bad
    model cannot silently poison downstream consumers.
    """
    data = np.asarray(data)
    if data.ndim != 2:
        raise ValueError(f"probability map must be 2-D, got shape {data.shape}")
    if not np.isfinite(data).all():
        raise ValueError("probability map contains non-finite values")
    clipped = np.clip(data.astype("<f4"), 0.0, 1.0)
    height, width = clipped.shape
    header = b"PMAP" + struct.pack("<HII", 1, width, height)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(header + clipped.tobytes())
    os.replace(tmp, path)


def read_truth(path: str | os.PathLike) -> dict:
    """Load a per-image truth sidecar.

    Returns the JSON object with `centers` and `spurious` converted to
    float arrays of shape (n, 2) and `interior`/`deleted` to bool arrays.
    """
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    for key in ("centers", "interior", "deleted", "spacing"):
        if key not in doc:
            raise FormatError(f"{path}: truth file missing {key!r}")
    doc["centers"] = np.asarray(doc["centers"], dtype=np.float64).reshape(-1, 2)
    doc["spurious"] = np.asarray(doc.get("spurious", []),
                                 dtype=np.float64).reshape(-1, 2)
    doc["interior"] = np.asarray(doc["interior"], dtype=bool)
    doc["deleted"] = np.asarray(doc["deleted"], dtype=bool)
    n = len(doc["centers"])
    if len(doc["interior"]) != n or len(doc["deleted"]) != n:
        raise FormatError(f"{path}: per-hole flag lengths disagree with centers")
    return doc


@dataclass(frozen=True)
class ImageEntry:
    image_id: str
    session_id: str
    mrc_path: str
    pmap_path: str | None
    truth_path: str | None


@dataclass(frozen=True)
class Dataset:
    root: str
    kind: str
    sessions: tuple[str, ...]
    images: tuple[ImageEntry, ...] = field(repr=False)
    selections_path: str | None = None

    def session(self, session_id: str) -> tuple[ImageEntry, ...]:
        out = tuple(e for e in self.images if e.session_id == session_id)
        if not out:
            raise KeyError(f"no images in session {session_id!r}")
        return out


def scan_dataset(root: str | os.PathLike) -> Dataset:
    """Walk a dataset directory via its manifest.

    Layout: dataset.json at the root, one directory per session holding
    {image}.mrc plus optional {image}.pmap / {image}.json sidecars, and
    an optional selections.csv at the root.
    """
    root = os.fspath(root)
    manifest_path = os.path.join(root, "dataset.json")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "gridscout-dataset":
        raise FormatError(f"{manifest_path}: not a dataset manifest")
    sessions = tuple(manifest["sessions"])
    images = []
    for session_id in sessions:
        sdir = os.path.join(root, session_id)
        names = sorted(n[:-4] for n in os.listdir(sdir) if n.endswith(".mrc"))
        for name in names:
            pmap = os.path.join(sdir, name + ".pmap")
            truth = os.path.join(sdir, name + ".json")
            images.append(ImageEntry(
                image_id=name,
                session_id=session_id,
                mrc_path=os.path.join(sdir, name + ".mrc"),
                pmap_path=pmap if os.path.exists(pmap) else None,
                truth_path=truth if os.path.exists(truth) else None,
            ))
    sel = os.path.join(root, "selections.csv")
    return Dataset(root=root, kind=manifest.get("kind", ""), sessions=sessions,
                   images=tuple(images),
                   selections_path=sel if os.path.exists(sel) else None)


def read_selections(path: str | os.PathLike) -> dict[tuple[str, str], np.ndarray]:
    """Load operator picks grouped by (session_id, image_id).

    Each group maps to a float array of shape (n, 2) holding x, y pixel
    coordinates.
    """
    groups: dict[tuple[str, str], list[list[float]]] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"image_id", "session_id", "x", "y"}
        if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
            raise FormatError(f"{path}: selections header must contain {sorted(needed)}")
        for row in reader:
            key = (row["session_id"], row["image_id"])
            groups.setdefault(key, []).append([float(row["x"]), float(row["y"])])
    return {key: np.asarray(pts, dtype=np.float64) for key, pts in groups.items()}


def write_scores(path: str | os.PathLike, rows) -> None:
    """Write classifier outputs as a crop_id,score,label CSV.

    `rows` yields (crop_id, score, label) tuples; label may be None for
    unlabeled crops and is then written as an empty field.
    """
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["crop_id", "score", "label"])
        for crop_id, score, label in rows:
            writer.writerow([crop_id, f"{float(score):.6f}",
                             "" if label is None else int(label)])
    os.replace(tmp, path)


def read_scores(path: str | os.PathLike) -> list[tuple[str, float, int | None]]:
    """Read a crop_id,score,label CSV back into tuples."""
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"crop_id", "score", "label"}
        if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
            raise FormatError(f"{path}: scores header must contain {sorted(needed)}")
        for row in reader:
            label = row["label"].strip()
            out.append((row["crop_id"], float(row["score"]),
                        int(label) if label else None))
    return out

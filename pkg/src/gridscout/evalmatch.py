"""True/false-positive matching between predicted regions and operator
selections, with per-session aggregation.

A selection is a true positive when some region contains it and no other
selection (one-to-one mapping). Regions containing zero or two-plus
selections are false positives. Selections that never achieve a one-to-one
mapping are false negatives. Containment is closed (boundary counts).
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass

import numpy as np

from .imgio import atomic_write_bytes

SELECTIONS_HEADER = ("image_id", "session_id", "x", "y")


@dataclass(frozen=True)
class Region:
    """Axis-aligned square (size = side) or circle (size = radius)."""

    kind: str
    center: tuple[float, float]
    size: float
    source: str = ""

    def __post_init__(self):
        if self.kind not in ("square", "circle"):
            raise ValueError(f"region kind must be square or circle, got {self.kind!r}")
        if self.size <= 0:
            raise ValueError("region must have positive extent")

    def contains(self, x: float, y: float) -> bool:
        dx = x - self.center[0]
        dy = y - self.center[1]
        if self.kind == "square":
            half = self.size / 2.0
            return abs(dx) <= half and abs(dy) <= half
        return dx * dx + dy * dy <= self.size * self.size


@dataclass(frozen=True)
class Selection:
    """One operator-chosen point."""

    x: float
    y: float
    image_id: str = ""
    session_id: str = ""


@dataclass(frozen=True)
class MatchReport:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float


def _metrics(tp: int, fp: int, fn: int) -> MatchReport:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) \
        if precision + recall else 0.0
    return MatchReport(tp=tp, fp=fp, fn=fn, precision=precision,
                       recall=recall, f1=f1)


def match(regions, sels) -> MatchReport:
    """Count TP selections, FP regions, and FN selections for one image.

    Any region-like object with contains(x, y) works. Per-selection rule:
    a selection inside several single-selection regions is still one TP.
    """
    contained: list[list[int]] = []
    for region in regions:
        hits = [i for i, s in enumerate(sels) if region.contains(s.x, s.y)]
        contained.append(hits)
    tp_selections = {hits[0] for hits in contained if len(hits) == 1}
    fp = sum(1 for hits in contained if len(hits) != 1)
    tp = len(tp_selections)
    fn = len(sels) - tp
    return _metrics(tp, fp, fn)


@dataclass(frozen=True)
class SessionSummary:
    """Per-session reports plus their unweighted metric means."""

    per_session: dict
    mean_precision: float
    mean_recall: float
    mean_f1: float


def aggregate_sessions(reports) -> SessionSummary:
    """Sum counts within each session, then average metrics across sessions.

    `reports` is an iterable of (session_id, MatchReport). Every session
    counts equally in the means regardless of its image or hole count.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("need at least one report to aggregate")
    totals: dict[str, list[int]] = {}
    for session_id, report in reports:
        bucket = totals.setdefault(str(session_id), [0, 0, 0])
        bucket[0] += report.tp
        bucket[1] += report.fp
        bucket[2] += report.fn
    per_session = {sid: _metrics(*counts)
                   for sid, counts in sorted(totals.items())}
    sessions = list(per_session.values())
    return SessionSummary(
        per_session=per_session,
        mean_precision=float(np.mean([r.precision for r in sessions])),
        mean_recall=float(np.mean([r.recall for r in sessions])),
        mean_f1=float(np.mean([r.f1 for r in sessions])),
    )


def load_selections(path: str | os.PathLike) -> list[Selection]:
    """Read a selections CSV with header image_id, session_id, x, y."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(SELECTIONS_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"selections CSV missing columns {sorted(missing)}")
        return [Selection(x=float(row["x"]), y=float(row["y"]),
                          image_id=row["image_id"],
                          session_id=row["session_id"])
                for row in reader]


def save_selections(sels, path: str | os.PathLike) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SELECTIONS_HEADER)
    for s in sels:
        writer.writerow([s.image_id, s.session_id, repr(float(s.x)),
                         repr(float(s.y))])
    atomic_write_bytes(path, buf.getvalue().encode("utf-8"))

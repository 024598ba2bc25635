"""Batch command-line front end for the detection pipeline.

Subcommands: squares, rank-squares, fit-lattice, eval, train, synth.
Exit codes: 0 on success, 2 on input errors (missing files, bad formats,
malformed config). Config values resolve as flags > config file > defaults;
the config file is flat `key = value` lines with `#` comments. All JSON
outputs are byte-deterministic for identical inputs; PNG overlays are not
part of that contract.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from . import classify, evalmatch, overlay
from . import lattice as lattice_mod
from . import synth as synth_mod
from .imgio import atomic_write_bytes, load_image, load_pmap, save_image
from .squares import RotatedRect, crop_square, detect_squares

FEATURES_HEADER = ("image_id", "cx", "cy") + classify.FEATURE_ORDER + ("label",)


@dataclass
class PipelineConfig:
    """Every tunable the subcommands share."""

    em_tol: float = 1e-6
    em_max_iters: int = 100
    connectivity: int = 4
    min_component: int | None = None  # None: 0.05% of image pixels
    k: int = 6
    w_fp: float = 1.0
    w_fn: float = 2.0
    centroid_threshold: float = 0.5
    min_region: int = 4
    crop_margin: float = 60.0
    prob_threshold: float | None = 0.5  # None disables the crop filter
    render_radius: float | None = None  # None: max(3, round(spacing / 8))
    seed: int = 0


_OPTIONAL_FLOAT_FIELDS = {"prob_threshold", "render_radius"}
_OPTIONAL_INT_FIELDS = {"min_component"}


def _coerce_config_value(name: str, raw: str):
    if name in _OPTIONAL_FLOAT_FIELDS or name in _OPTIONAL_INT_FIELDS:
        if raw.strip().lower() in ("none", "null", ""):
            return None
        return int(raw) if name in _OPTIONAL_INT_FIELDS else float(raw)
    for f in fields(PipelineConfig):
        if f.name == name:
            if f.type == "int":
                return int(raw)
            if f.type == "float":
                return float(raw)
            return raw
    raise ValueError(f"unknown config key {name!r}")


def parse_config_file(path: str) -> dict:
    """Flat key = value file; '#' starts a comment."""
    out = {}
    known = {f.name for f in fields(PipelineConfig)}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = _coerce_config_value(key, value.strip())
    return out


def resolve_config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if getattr(args, "config", None):
        for key, value in parse_config_file(args.config).items():
            setattr(cfg, key, value)
    for f in fields(PipelineConfig):
        flag_value = getattr(args, f.name, None)
        if flag_value is not None:
            if isinstance(flag_value, str):
                flag_value = _coerce_config_value(f.name, flag_value)
            setattr(cfg, f.name, flag_value)
    return cfg


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("pipeline config")
    g.add_argument("--config", help="flat key = value config file")
    g.add_argument("--em-tol", dest="em_tol", type=float)
    g.add_argument("--em-max-iters", dest="em_max_iters", type=int)
    g.add_argument("--connectivity", type=int, choices=(4, 8))
    g.add_argument("--min-component", dest="min_component")
    g.add_argument("--k", type=int)
    g.add_argument("--w-fp", dest="w_fp", type=float)
    g.add_argument("--w-fn", dest="w_fn", type=float)
    g.add_argument("--centroid-threshold", dest="centroid_threshold", type=float)
    g.add_argument("--min-region", dest="min_region", type=int)
    g.add_argument("--crop-margin", dest="crop_margin", type=float)
    g.add_argument("--prob-threshold", dest="prob_threshold",
                   help="crop probability-sum filter; 'none' disables")
    g.add_argument("--render-radius", dest="render_radius")
    g.add_argument("--seed", type=int)
    parser.add_argument("--jobs", type=int, default=1,
                        help="images processed concurrently")


def _write_json(doc: dict, path: str) -> None:
    payload = json.dumps(doc, indent=2, sort_keys=True).encode("ascii")
    atomic_write_bytes(path, payload + b"\n")


def _rect_doc(rect: RotatedRect) -> dict:
    return {"cx": rect.center[0], "cy": rect.center[1], "width": rect.width,
            "height": rect.height, "theta": rect.theta}


def _rect_from_doc(doc: dict) -> RotatedRect:
    return RotatedRect(center=(float(doc["cx"]), float(doc["cy"])),
                       width=float(doc["width"]), height=float(doc["height"]),
                       theta=float(doc["theta"]))


def _run_jobs(worker, items, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [worker(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, items))


# ---------------------------------------------------------------------------
# squares / rank-squares


def _detect_for_image(path: str, cfg: PipelineConfig):
    img = load_image(path)
    solution = detect_squares(img, em_tol=cfg.em_tol,
                              em_max_iters=cfg.em_max_iters,
                              connectivity=cfg.connectivity,
                              min_component=cfg.min_component)
    return img, solution


def _load_truth_squares(image_path: str):
    truth_path = os.path.splitext(image_path)[0] + ".json"
    if not os.path.exists(truth_path):
        return None
    with open(truth_path, "r", encoding="ascii") as fh:
        doc = json.load(fh)
    if doc.get("format") != synth_mod.TRUTH_FORMAT or doc.get("kind") != "lowmag":
        return None
    return doc.get("squares", [])


def _feature_rows(img, solution, image_path: str) -> list[list]:
    truth = _load_truth_squares(image_path)
    rows = []
    for rect in solution.rects:
        crop = crop_square(img, rect)
        feats = classify.extract_features(crop)
        label = ""
        if truth is not None:
            hit = any(sq["selected"] and
                      rect.contains(sq["x"], sq["y"]) for sq in truth)
            label = 1 if hit else 0
        rows.append([img.id, rect.center[0], rect.center[1]]
                    + [getattr(feats, n) for n in classify.FEATURE_ORDER]
                    + [label])
    return rows


def _write_features_csv(rows: list[list], path: str) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FEATURES_HEADER)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def cmd_squares(args) -> int:
    cfg = resolve_config(args)
    os.makedirs(args.out_dir, exist_ok=True)

    def work(path):
        img, solution = _detect_for_image(path, cfg)
        doc = {"format": "gridscout-rects", "version": 1, "image_id": img.id,
               "theta": solution.theta, "total_area": solution.total_area,
               "rects": [_rect_doc(r) for r in solution.rects]}
        _write_json(doc, os.path.join(args.out_dir, f"{img.id}.rects.json"))
        if args.overlay:
            canvas = overlay.draw_rects(img, solution.rects)
            overlay.save_overlay(
                canvas, os.path.join(args.out_dir, f"{img.id}.overlay.png"))
        rows = _feature_rows(img, solution, path) if args.features_out else []
        return img.id, len(solution.rects), solution.theta, rows

    results = _run_jobs(work, list(args.images), args.jobs)
    feature_rows = []
    for image_id, n_rects, theta, rows in results:
        feature_rows.extend(rows)
        print(f"{image_id}: {n_rects} rects at theta {theta:.3f} deg")
    if args.features_out:
        _write_features_csv(feature_rows, args.features_out)
    return 0


def cmd_rank_squares(args) -> int:
    cfg = resolve_config(args)
    os.makedirs(args.out_dir, exist_ok=True)
    model = classify.load_model(args.model)

    def work(path):
        img, solution = _detect_for_image(path, cfg)
        feats = [classify.extract_features(crop_square(img, r))
                 for r in solution.rects]
        scores = classify.predict_scores(model, feats) if feats else np.empty(0)
        doc = {"format": "gridscout-scores", "version": 1, "image_id": img.id,
               "theta": solution.theta,
               "rects": [_rect_doc(r) for r in solution.rects],
               "scores": [float(s) for s in scores]}
        _write_json(doc, os.path.join(args.out_dir, f"{img.id}.scores.json"))
        if args.overlay:
            canvas = overlay.draw_rects(img, solution.rects, scores=scores)
            overlay.save_overlay(
                canvas, os.path.join(args.out_dir, f"{img.id}.overlay.png"))
        return img.id, len(solution.rects)

    for image_id, n in _run_jobs(work, list(args.images), args.jobs):
        print(f"{image_id}: scored {n} rects")
    return 0


# ---------------------------------------------------------------------------
# fit-lattice


def cmd_fit_lattice(args) -> int:
    cfg = resolve_config(args)
    os.makedirs(args.out_dir, exist_ok=True)

    def work(path):
        pmap = load_pmap(path)
        image_id = os.path.splitext(os.path.basename(path))[0]
        params = lattice_mod.FitParams(
            threshold=cfg.centroid_threshold, k=cfg.k,
            weights=lattice_mod.CostWeights(w_fp=cfg.w_fp, w_fn=cfg.w_fn),
            radius=cfg.render_radius, min_region=cfg.min_region)
        fit = lattice_mod.fit_lattice(pmap, params)
        doc = {"format": "gridscout-lattice", "version": 1,
               "image_id": image_id,
               "anchor_a": list(fit.anchor_a), "anchor_b": list(fit.anchor_b),
               "spacing": fit.spacing, "cost": fit.cost,
               "points": fit.points.tolist()}
        _write_json(doc, os.path.join(args.out_dir, f"{image_id}.lattice.json"))

        image_path = os.path.splitext(path)[0] + ".mrc"
        crops = []
        if os.path.exists(image_path):
            img = load_image(image_path)
            crops = lattice_mod.lattice_crops(
                fit, img, pmap, margin=cfg.crop_margin,
                prob_threshold=cfg.prob_threshold)
            index = []
            if args.save_crops:
                crop_dir = os.path.join(args.out_dir, f"{image_id}.crops")
                os.makedirs(crop_dir, exist_ok=True)
            for k, crop in enumerate(crops):
                entry = {"image_id": image_id, "center": list(crop.center),
                         "side": crop.side, "prob_sum": crop.prob_sum}
                if args.save_crops:
                    crop_file = os.path.join(crop_dir, f"crop{k:03d}.mrc")
                    save_image(crop.pixels, crop_file)
                    entry["file"] = os.path.relpath(crop_file, args.out_dir)
                index.append(entry)
            _write_json({"format": "gridscout-crops", "version": 1,
                         "image_id": image_id, "crops": index},
                        os.path.join(args.out_dir, f"{image_id}.crops.json"))
            regions = lattice_mod.crop_regions(crops)
            _write_json(_regions_doc(image_id, regions),
                        os.path.join(args.out_dir, f"{image_id}.regions.json"))
            if args.overlay:
                radius = cfg.render_radius if cfg.render_radius is not None \
                    else lattice_mod.default_radius(fit.spacing)
                canvas = overlay.draw_lattice(img, fit.points, radius,
                                              boxes=crops)
                overlay.save_overlay(
                    canvas, os.path.join(args.out_dir,
                                         f"{image_id}.overlay.png"))
        return image_id, fit.spacing, len(crops)

    for image_id, spacing, n_crops in _run_jobs(work, list(args.pmaps),
                                                args.jobs):
        print(f"{image_id}: spacing {spacing:.3f} px, {n_crops} crops")
    return 0


def _regions_doc(image_id: str, regions) -> dict:
    return {"format": "gridscout-regions", "version": 1, "image_id": image_id,
            "regions": [{"kind": r.kind, "cx": r.center[0], "cy": r.center[1],
                         "size": r.size, "source": r.source}
                        for r in regions]}


# ---------------------------------------------------------------------------
# eval


def _load_prediction_regions(path: str):
    """Regions from either a regions JSON or a rects JSON."""
    with open(path, "r", encoding="ascii") as fh:
        doc = json.load(fh)
    fmt = doc.get("format")
    if fmt == "gridscout-regions":
        regions = [evalmatch.Region(kind=r["kind"],
                                    center=(float(r["cx"]), float(r["cy"])),
                                    size=float(r["size"]),
                                    source=r.get("source", ""))
                   for r in doc["regions"]]
    elif fmt in ("gridscout-rects", "gridscout-scores"):
        regions = [_rect_from_doc(r) for r in doc["rects"]]
    else:
        raise ValueError(f"{path}: unknown prediction format {fmt!r}")
    return doc["image_id"], regions


def cmd_eval(args) -> int:
    selections = evalmatch.load_selections(args.selections)
    by_image: dict[str, list] = {}
    session_of: dict[str, str] = {}
    for sel in selections:
        by_image.setdefault(sel.image_id, []).append(sel)
        session_of.setdefault(sel.image_id, sel.session_id)

    reports = []
    for path in args.predictions:
        image_id, regions = _load_prediction_regions(path)
        sels = by_image.get(image_id, [])
        session = session_of.get(image_id, "")
        reports.append((session, evalmatch.match(regions, sels)))
    summary = evalmatch.aggregate_sessions(reports)

    print(f"{'Session':<12}{'TP':>6}{'FP':>6}{'FN':>6}"
          f"{'Precision':>11}{'Recall':>9}{'F1':>8}")
    for sid, rep in summary.per_session.items():
        print(f"{sid:<12}{rep.tp:>6}{rep.fp:>6}{rep.fn:>6}"
              f"{rep.precision:>11.3f}{rep.recall:>9.3f}{rep.f1:>8.3f}")
    print(f"Overall: P {summary.mean_precision:.3f}  "
          f"R {summary.mean_recall:.3f}  F1 {summary.mean_f1:.3f}")

    if args.out:
        doc = {"format": "gridscout-eval", "version": 1,
               "sessions": {sid: {"tp": r.tp, "fp": r.fp, "fn": r.fn,
                                  "precision": r.precision,
                                  "recall": r.recall, "f1": r.f1}
                            for sid, r in summary.per_session.items()},
               "mean": {"precision": summary.mean_precision,
                        "recall": summary.mean_recall,
                        "f1": summary.mean_f1}}
        _write_json(doc, args.out)
    return 0


# ---------------------------------------------------------------------------
# train


def _read_features_csv(path: str):
    X_rows, labels = [], []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(classify.FEATURE_ORDER) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"features CSV missing columns {sorted(missing)}")
        if "label" not in (reader.fieldnames or ()):
            raise ValueError("features CSV missing 'label' column")
        for row in reader:
            if row["label"] in ("", None):
                continue  # unlabeled rows cannot train
            X_rows.append([float(row[n]) for n in classify.FEATURE_ORDER])
            labels.append(int(float(row["label"])))
    if not X_rows:
        raise ValueError(f"{path}: no labeled rows")
    return np.array(X_rows), np.array(labels)


def cmd_train(args) -> int:
    X, y = _read_features_csv(args.features)
    if args.kind == "logreg":
        model = classify.train_logreg(X, y, epochs=args.epochs, lr=args.lr)
    else:
        model = classify.train_forest(X, y, tree_count=args.tree_count,
                                      max_depth=args.max_depth,
                                      seed=args.seed or 0)
    classify.save_model(model, args.out)
    scores = classify.predict_scores(model, X)
    auc = classify.roc_auc(scores, y) if len(set(y.tolist())) == 2 else float("nan")
    print(f"trained {args.kind} on {len(y)} rows; training AUC {auc:.3f}")
    return 0


# ---------------------------------------------------------------------------
# synth


def _apply_sets(cfg, pairs: list[str]):
    values = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    by_name = {f.name: f for f in fields(cfg)}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"--set needs key=value, got {pair!r}")
        key, _, raw = pair.partition("=")
        key = key.strip().replace("-", "_")
        if key not in by_name:
            raise ValueError(f"unknown generator option {key!r}")
        raw = raw.strip()
        ftype = by_name[key].type
        if raw.lower() in ("none", "null"):
            values[key] = None
        elif ftype == "bool":
            values[key] = raw.lower() in ("1", "true", "yes")
        elif ftype == "int":
            values[key] = int(raw)
        else:
            try:
                values[key] = float(raw)
            except ValueError:
                values[key] = raw
    return type(cfg)(**values)


def cmd_synth(args) -> int:
    base = synth_mod.LowMagConfig() if args.kind == "lowmag" \
        else synth_mod.MedMagConfig()
    cfg = _apply_sets(base, args.set or [])
    manifest = synth_mod.make_dataset(args.out_dir, kind=args.kind,
                                      sessions=args.sessions,
                                      images_per_session=args.images,
                                      cfg=cfg, seed=args.seed or 0)
    print(f"wrote {len(manifest['images'])} images in "
          f"{len(manifest['sessions'])} sessions to {args.out_dir} "
          f"({manifest['selections']} selections)")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridscout",
        description="Grid square and hole targeting pipeline.")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("squares", help="detect squares in low-mag images")
    p.add_argument("images", nargs="+")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--overlay", action="store_true")
    p.add_argument("--features-out",
                   help="also write a features CSV (labels from sibling "
                        "truth JSON when present)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_squares)

    p = sub.add_parser("rank-squares", help="score detected squares")
    p.add_argument("images", nargs="+")
    p.add_argument("--model", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--overlay", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_rank_squares)

    p = sub.add_parser("fit-lattice", help="fit hole lattices to PMAP maps")
    p.add_argument("pmaps", nargs="+")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--overlay", action="store_true")
    p.add_argument("--save-crops", action="store_true",
                   help="write each hole crop as MRC")
    _add_config_flags(p)
    p.set_defaults(func=cmd_fit_lattice)

    p = sub.add_parser("eval", help="match predictions against selections")
    p.add_argument("predictions", nargs="+",
                   help="regions/rects/scores JSON files")
    p.add_argument("--selections", required=True)
    p.add_argument("--out", help="write the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="train a ranking model from features CSV")
    p.add_argument("--features", required=True)
    p.add_argument("--kind", choices=("logreg", "forest"), default="logreg")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=10000)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--tree-count", type=int, default=100)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--kind", choices=("lowmag", "medmag"), default="medmag")
    p.add_argument("--sessions", type=int, default=1)
    p.add_argument("--images", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a generator config field")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return 2
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

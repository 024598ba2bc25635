"""Command line front end.

Subcommands cover the full learned pipeline: train the hole detector on
a dataset directory, write probability maps for a session, score the
maps against truth sidecars, and train/apply the crop classifiers.
Every command is deterministic for a fixed seed.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import cnn, data, formats, unet


def _parse_sizes(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _load_samples(dataset: formats.Dataset, skip_session: str | None
                  ) -> list[tuple[np.ndarray, np.ndarray]]:
    """(image, picks) pairs for every image outside `skip_session`."""
    if dataset.selections_path is None:
        raise SystemExit("dataset has no selections.csv to train on")
    picks = formats.read_selections(dataset.selections_path)
    samples = []
    for entry in dataset.images:
        if entry.session_id == skip_session:
            continue
        image, _ = formats.read_mrc(entry.mrc_path)
        pts = picks.get((entry.session_id, entry.image_id),
                        np.zeros((0, 2), dtype=np.float64))
        samples.append((image, pts))
    return samples


def cmd_train_unet(args) -> int:
    dataset = formats.scan_dataset(args.data)
    if args.holdout is not None and args.holdout not in dataset.sessions:
        raise SystemExit(f"holdout session {args.holdout!r} not in dataset")
    samples = _load_samples(dataset, args.holdout)
    result = unet.train_unet(
        samples,
        unet.TrainConfig(steps=args.steps, seed=args.seed,
                         blur_target=args.blur_target,
                         log_every=args.log_every),
        unet.UNetSpec(depth=args.depth),
    )
    unet.save_checkpoint(args.out, result.model, result.blur)
    if args.sigma_trace:
        with open(args.sigma_trace, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "sigma"])
            for step, sigma in enumerate(result.sigma_trace):
                writer.writerow([step, f"{sigma:.6f}"])
    print(f"trained on {len(samples)} images for {args.steps} steps; "
          f"final loss {result.losses[-1]:.4f}, "
          f"final sigma {result.sigma_trace[-1]:.3f}")
    print(f"saved {args.out}")
    return 0


def cmd_infer(args) -> int:
    model, _ = unet.load_checkpoint(args.model)
    dataset = formats.scan_dataset(args.data)
    entries = dataset.session(args.session) if args.session else dataset.images
    os.makedirs(args.out_dir, exist_ok=True)
    for entry in entries:
        image, _ = formats.read_mrc(entry.mrc_path)
        pmap = unet.infer_probmap(model, image)
        out = os.path.join(args.out_dir, f"{entry.image_id}.pmap")
        formats.write_pmap(out, pmap)
        print(f"wrote {out}")
    return 0


def cmd_eval_recall(args) -> int:
    dataset = formats.scan_dataset(args.data)
    entries = dataset.session(args.session) if args.session else dataset.images
    hits = total = 0
    for entry in entries:
        if entry.truth_path is None:
            raise SystemExit(f"{entry.image_id} has no truth sidecar")
        truth = formats.read_truth(entry.truth_path)
        pmap = formats.read_pmap(
            os.path.join(args.pmaps, f"{entry.image_id}.pmap"))
        centers = truth["centers"][truth["interior"]]
        tol = args.tol if args.tol is not None else truth["spacing"] / 3.0
        found = data.extract_centroids(pmap, threshold=args.threshold)
        recall = data.point_recall(found, centers, tol)
        hits += round(recall * len(centers))
        total += len(centers)
        print(f"{entry.session_id}/{entry.image_id}  holes {len(centers):3d}  "
              f"recall {recall:.3f}")
    print(f"overall recall {hits / max(total, 1):.4f}  ({hits}/{total})")
    return 0


def cmd_synth_crops(args) -> int:
    crops, labels = data.make_crop_fixtures(args.count, seed=args.seed,
                                            sizes=_parse_sizes(args.sizes))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "labels.csv"), "w",
              encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["crop_id", "label"])
        for k, (crop, label) in enumerate(zip(crops, labels)):
            crop_id = f"crop{k:05d}"
            np.save(os.path.join(args.out, f"{crop_id}.npy"), crop)
            writer.writerow([crop_id, int(label)])
    print(f"wrote {len(crops)} crops to {args.out}")
    return 0


def _load_crop_dir(path: str) -> tuple[list[str], list[np.ndarray], np.ndarray]:
    ids, crops, labels = [], [], []
    with open(os.path.join(path, "labels.csv"), "r",
              encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            ids.append(row["crop_id"])
            crops.append(np.load(os.path.join(path, row["crop_id"] + ".npy")))
            labels.append(int(row["label"]))
    return ids, crops, np.asarray(labels)


def cmd_train_cnn(args) -> int:
    _, crops, labels = _load_crop_dir(args.crops)
    model = cnn.train_classifier(crops, labels, variant=args.variant,
                                 head=args.head, in_size=args.in_size,
                                 seed=args.seed)
    cnn.save_classifier(args.out, model)
    print(f"trained {args.variant}/{args.head} classifier on "
          f"{len(crops)} crops; saved {args.out}")
    return 0


def cmd_score_crops(args) -> int:
    model = cnn.load_classifier(args.model)
    ids, crops, labels = _load_crop_dir(args.crops)
    scores = cnn.score_crops(model, crops)
    formats.write_scores(args.out, zip(ids, scores, labels))
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridlearn",
        description="learned hole detection and crop scoring",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-unet", help="train the hole detector")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--holdout", default=None,
                   help="session to exclude from training")
    p.add_argument("--steps", type=int, default=6000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--depth", type=int, default=9)
    p.add_argument("--blur-target", action="store_true",
                   help="smear the target instead of the prediction")
    p.add_argument("--sigma-trace", default=None,
                   help="write the per-step blur width to this CSV")
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_train_unet)

    p = sub.add_parser("infer", help="write probability maps for a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--session", default=None,
                   help="restrict to one session (default: all)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval-recall",
                       help="compare probability maps with truth sidecars")
    p.add_argument("--data", required=True)
    p.add_argument("--session", default=None)
    p.add_argument("--pmaps", required=True,
                   help="directory holding {image_id}.pmap files")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--tol", type=float, default=None,
                   help="match radius in pixels (default: spacing / 3)")
    p.set_defaults(func=cmd_eval_recall)

    p = sub.add_parser("synth-crops", help="generate labeled classifier crops")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", default="40,72")
    p.set_defaults(func=cmd_synth_crops)

    p = sub.add_parser("train-cnn", help="train a crop classifier")
    p.add_argument("--crops", required=True, help="crop directory")
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=sorted(cnn.SPECS), default="hole")
    p.add_argument("--head", choices=["avg", "pad"], default="avg")
    p.add_argument("--in-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_cnn)

    p = sub.add_parser("score-crops", help="score crops with a classifier")
    p.add_argument("--model", required=True)
    p.add_argument("--crops", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score_crops)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (formats.FormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

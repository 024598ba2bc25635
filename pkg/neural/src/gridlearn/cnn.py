"""Crop classifiers that score detections for collectability.

Two convolutional stacks are provided: a wide one for hole crops and a
narrower one for square crops.  Each stack can be finished either with a
fixed-size head that flattens the final feature map (crops must then be
padded to one canonical size, and anything larger is rejected) or with a
spatial-average head that reduces the feature map to one vector per crop
and therefore accepts crops of any size in the same evaluation pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import standardize


@dataclass(frozen=True)
class CNNSpec:
    first_convs: int   # 5x5 convolutions before the 3x3 stack
    channels: int
    batch_size: int
    epochs: int


SPECS = {
    "square": CNNSpec(first_convs=2, channels=64, batch_size=128, epochs=2),
    "hole": CNNSpec(first_convs=1, channels=128, batch_size=32, epochs=5),
}
REST_CONVS = 3  # 3x3 convolutions after the 5x5 stack, in every variant


class CropClassifier(nn.Module):
    """Conv stack with batch norm, ReLU, and 2x pooling after each layer.

    `head` selects how the final feature map becomes a logit: "pad"
    flattens it, which fixes the input size to `in_size`; "avg" takes the
    spatial mean, which works for any crop at least `min_size` pixels on
    a side.
    """

    def __init__(self, variant: str = "hole", head: str = "avg",
                 in_size: int | None = None):
        super().__init__()
        if variant not in SPECS:
            raise ValueError(f"unknown variant {variant!r}")
        if head not in ("pad", "avg"):
            raise ValueError(f"unknown head {head!r}")
        if head == "pad" and in_size is None:
            raise ValueError("the pad head needs a fixed in_size")
        spec = SPECS[variant]
        self.variant = variant
        self.head = head
        self.in_size = in_size if head == "pad" else None
        self.min_size = 2 ** (spec.first_convs + REST_CONVS)
        layers: list[nn.Module] = []
        prev = 1
        for k in range(spec.first_convs + REST_CONVS):
            kernel = 5 if k < spec.first_convs else 3
            layers += [
                nn.Conv2d(prev, spec.channels, kernel, padding=kernel // 2),
                nn.BatchNorm2d(spec.channels),
                nn.ReLU(),
                nn.MaxPool2d(2),
            ]
            prev = spec.channels
        self.features = nn.Sequential(*layers)
        if head == "pad":
            if in_size < self.min_size:
                raise ValueError(
                    f"in_size {in_size} is below the minimum {self.min_size}"
                )
            with torch.no_grad():
                probe = self.features(torch.zeros(1, 1, in_size, in_size))
            self.fc = nn.Linear(probe.numel(), 1)
        else:
            self.fc = nn.Linear(spec.channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Logits of shape (B,) for crops (B, 1, H, W)."""
        x = self.features(x)
        if self.head == "avg":
            x = x.mean(dim=(2, 3))
        else:
            x = x.flatten(1)
        return self.fc(x)[:, 0]

    def prepare(self, crop: np.ndarray) -> torch.Tensor:
        """Standardize one crop and fit it to the head's expectations.

        The pad head centers the crop in a zero field of the canonical
        size and rejects crops that do not fit; the avg head only checks
        the minimum size imposed by the pooling stack.
        """
        crop = np.asarray(crop)
        height, width = crop.shape
        if min(height, width) < self.min_size:
            raise ValueError(
                f"crop {width} x {height} is below the minimum "
                f"{self.min_size} x {self.min_size}"
            )
        tensor = torch.from_numpy(standardize(crop))
        if self.head == "pad":
            if height > self.in_size or width > self.in_size:
                raise ValueError(
                    f"crop {width} x {height} exceeds the fixed input size "
                    f"{self.in_size}; the pad head cannot shrink crops"
                )
            left = (self.in_size - width) // 2
            top = (self.in_size - height) // 2
            tensor = F.pad(tensor, (left, self.in_size - width - left,
                                    top, self.in_size - height - top))
        return tensor


def train_classifier(crops: list[np.ndarray], labels: np.ndarray,
                     variant: str = "hole", head: str = "avg",
                     in_size: int | None = None, seed: int = 0,
                     lr: float = 1e-3) -> CropClassifier:
    """Fit a classifier on labeled crops.

    Batches follow the variant's preset size and epoch count, and every
    drawn crop is augmented with a random quarter turn.  Crops of
    different shapes cannot share a tensor, so each epoch shuffles the
    crops, groups them by shape, and then shuffles the resulting batch
    order; with the pad head every crop lands in one canonical shape
    anyway.  Training requires both classes to be present.
    """
    labels = np.asarray(labels, dtype=np.float32)
    if len(crops) != len(labels):
        raise ValueError("crops and labels differ in length")
    if len(np.unique(labels)) < 2:
        raise ValueError("training labels contain a single class")
    spec = SPECS[variant]
    if head == "pad" and in_size is None:
        in_size = max(max(c.shape) for c in crops)
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = CropClassifier(variant=variant, head=head, in_size=in_size)
    prepared = [model.prepare(c) for c in crops]
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    loss_fn = nn.BCEWithLogitsLoss()
    model.train()
    for _ in range(spec.epochs):
        order = rng.permutation(len(prepared))
        buckets: dict[tuple[int, int], list[int]] = {}
        for idx in order:
            buckets.setdefault(tuple(prepared[idx].shape), []).append(idx)
        batches = []
        for members in buckets.values():
            start = len(batches)
            for k in range(0, len(members), spec.batch_size):
                batches.append(members[k:k + spec.batch_size])
            # a singleton batch breaks batch-norm statistics when the
            # feature map is 1x1, so fold it into its predecessor
            if len(batches[-1]) == 1 and len(batches) > start + 1:
                batches[-2] += batches.pop()
        for b in rng.permutation(len(batches)):
            batch = batches[b]
            x = torch.stack([
                torch.rot90(prepared[i], int(rng.integers(4)), dims=(0, 1))
                for i in batch
            ])[:, None]
            y = torch.from_numpy(labels[batch])
            opt.zero_grad()
            loss = loss_fn(model(x), y)
            loss.backward()
            opt.step()
    model.eval()
    return model


def score_crops(model: CropClassifier, crops: list[np.ndarray],
                batch_size: int = 64) -> np.ndarray:
    """Probability scores for a mixed-size list of crops, in input order."""
    model.eval()
    scores = np.zeros(len(crops), dtype=np.float64)
    prepared = [model.prepare(c) for c in crops]
    buckets: dict[tuple[int, int], list[int]] = {}
    for idx, tensor in enumerate(prepared):
        buckets.setdefault(tuple(tensor.shape), []).append(idx)
    with torch.no_grad():
        for members in buckets.values():
            for k in range(0, len(members), batch_size):
                batch = members[k:k + batch_size]
                x = torch.stack([prepared[i] for i in batch])[:, None]
                scores[batch] = torch.sigmoid(model(x)).numpy()
    return scores


def save_classifier(path, model: CropClassifier) -> None:
    torch.save({
        "kind": "gridlearn-classifier",
        "variant": model.variant,
        "head": model.head,
        "in_size": model.in_size,
        "model": model.state_dict(),
    }, path)


def load_classifier(path) -> CropClassifier:
    doc = torch.load(path, map_location="cpu", weights_only=True)
    if doc.get("kind") != "gridlearn-classifier":
        raise ValueError(f"{path} is not a classifier checkpoint")
    model = CropClassifier(variant=doc["variant"], head=doc["head"],
                           in_size=doc["in_size"])
    model.load_state_dict(doc["model"])
    model.eval()
    return model

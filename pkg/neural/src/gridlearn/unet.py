"""Hole detector: a narrow U-Net trained against picked-pixel targets.

The target for an image is an indicator map with one unit pixel per
pick, so raw dense predictions and sparse targets barely overlap.  To
give the optimizer a gradient everywhere near a pick, the prediction
(or, optionally, the target) is smeared with a Gaussian whose width is
itself a trained parameter, and the positive class is up-weighted
heavily in the pixel-wise cross entropy.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import build_target, standardize

EPS = 1e-7


@dataclass(frozen=True)
class UNetSpec:
    """Architecture constants for the detector.

    `depth` counts resolution levels in each path (the contracting and
    expanding paths always mirror each other so the output shape can
    match the input).  No batch normalization anywhere.
    """
    depth: int = 9
    channels: int = 64
    head_bias: float = -10.0

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be at least 1")
        if self.channels < 1:
            raise ValueError("channels must be at least 1")


@dataclass(frozen=True)
class TrainConfig:
    """Detector training schedule.

    The main optimizer runs at adaptive-moment defaults; the blur width
    gets its own optimizer with a much larger learning rate because it
    is a single scalar shaping every pixel's gradient.  Augmentations
    are random quarter turns plus random sign inversion of the
    standardized image.
    """
    steps: int = 6000
    seed: int = 0
    lr: float = 1e-3
    sigma_lr: float = 0.1
    pos_weight: float = 100.0
    blur_target: bool = False
    log_every: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.pos_weight <= 0:
            raise ValueError("pos_weight must be positive")


class UNet(nn.Module):
    """Encoder-decoder with one convolution per resolution level.

    Every block is a single 3x3 convolution with `channels` filters and a
    ReLU; levels are linked by 2x max-pooling on the way down and nearest
    upsampling plus skip concatenation on the way up.  The 1x1 head
    starts with a strongly negative bias so a fresh model predicts
    near-zero probability everywhere, matching targets that are almost
    entirely background.
    """

    def __init__(self, spec: UNetSpec = UNetSpec()):
        super().__init__()
        self.spec = spec
        depth, channels = spec.depth, spec.channels
        self.down = nn.ModuleList(
            nn.Conv2d(1 if k == 0 else channels, channels, 3, padding=1)
            for k in range(depth)
        )
        self.up = nn.ModuleList(
            nn.Conv2d(2 * channels, channels, 3, padding=1)
            for _ in range(depth)
        )
        self.head = nn.Conv2d(channels, 1, 1)
        with torch.no_grad():
            self.head.bias.fill_(spec.head_bias)

    @property
    def depth(self) -> int:
        return self.spec.depth

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Logit map of the same spatial size as `x` (B, 1, H, W).

        H and W must be multiples of 2**depth; use `pad_to_grid` first.
        """
        skips = []
        for conv in self.down:
            x = F.relu(conv(x))
            skips.append(x)
            x = F.max_pool2d(x, 2)
        for conv in self.up:
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = F.relu(conv(torch.cat([x, skips.pop()], dim=1)))
        return self.head(x)


class GaussianBlur(nn.Module):
    """Separable Gaussian smoothing with a trained log-width.

    The width is stored as log(sigma) so gradient steps can never push it
    negative; it starts at log-width 1, i.e. sigma = e.  The kernel span
    follows the current width (3 sigma each side) but the span itself is
    taken from the detached value, so gradients flow only through the
    kernel weights.
    """

    def __init__(self, log_sigma: float = 1.0):
        super().__init__()
        self.log_sigma = nn.Parameter(torch.tensor(float(log_sigma)))

    @property
    def sigma(self) -> float:
        return float(self.log_sigma.detach().exp())

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        sigma = self.log_sigma.exp()
        radius = max(1, int(math.ceil(3.0 * float(sigma.detach()))))
        coords = torch.arange(-radius, radius + 1, dtype=x.dtype)
        kernel = torch.exp(-coords.pow(2) / (2.0 * sigma * sigma))
        kernel = kernel / kernel.sum()
        pad = (radius, radius)
        x = F.pad(x, pad + (0, 0), mode="reflect")
        x = F.conv2d(x, kernel.view(1, 1, 1, -1).to(x.dtype))
        x = F.pad(x, (0, 0) + pad, mode="reflect")
        x = F.conv2d(x, kernel.view(1, 1, -1, 1).to(x.dtype))
        return x


def pad_to_grid(x: torch.Tensor, multiple: int) -> tuple[torch.Tensor, int, int]:
    """Zero-pad the bottom and right of (B, C, H, W) up to `multiple`.

    Returns the padded tensor and the original height and width so the
    output can be cropped back.  Zero is the per-image mean after
    standardization, so the padding reads as plain background.
    """
    height, width = x.shape[-2], x.shape[-1]
    ph = (-height) % multiple
    pw = (-width) % multiple
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph))
    return x, height, width


def weighted_bce(pred: torch.Tensor, target: torch.Tensor,
                 pos_weight: float) -> torch.Tensor:
    """Pixel-mean cross entropy with the positive term scaled up."""
    pred = pred.clamp(EPS, 1.0 - EPS)
    loss = -(pos_weight * target * pred.log()
             + (1.0 - target) * (1.0 - pred).log())
    return loss.mean()


@dataclass
class TrainResult:
    model: UNet
    blur: GaussianBlur
    losses: list[float] = field(repr=False)
    sigma_trace: list[float] = field(repr=False)


def train_unet(samples: list[tuple[np.ndarray, np.ndarray]],
               cfg: TrainConfig = TrainConfig(),
               spec: UNetSpec = UNetSpec()) -> TrainResult:
    """Fit the detector on (image, picks) pairs.

    One image per step, drawn uniformly with replacement.  Each draw is
    augmented with a random quarter turn and, half the time, a sign flip
    of the standardized image, so the detector cannot key on absolute
    contrast polarity.  The current blur width is recorded once per
    step, before the update, so the trace starts at the initial width.
    """
    if not samples:
        raise ValueError("no training samples")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model = UNet(spec)
    blur = GaussianBlur()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sigma_opt = torch.optim.Adam(blur.parameters(), lr=cfg.sigma_lr)
    prepared = [(standardize(img), build_target(img.shape, picks))
                for img, picks in samples]
    losses: list[float] = []
    trace: list[float] = []
    model.train()
    for step in range(cfg.steps):
        image, target = prepared[rng.integers(len(prepared))]
        turns = int(rng.integers(4))
        if turns:
            image = np.rot90(image, turns)
            target = np.rot90(target, turns)
        image = np.ascontiguousarray(image)
        target = np.ascontiguousarray(target)
        if rng.integers(2):
            image = -image
        x = torch.from_numpy(image)[None, None]
        t = torch.from_numpy(target)[None, None]
        x, height, width = pad_to_grid(x, 2 ** spec.depth)
        logits = model(x)[..., :height, :width]
        pred = torch.sigmoid(logits)
        trace.append(blur.sigma)
        if cfg.blur_target:
            loss = weighted_bce(pred, blur(t).clamp(0.0, 1.0), cfg.pos_weight)
        else:
            loss = weighted_bce(blur(pred).clamp(0.0, 1.0), t, cfg.pos_weight)
        opt.zero_grad()
        sigma_opt.zero_grad()
        loss.backward()
        opt.step()
        sigma_opt.step()
        losses.append(float(loss.detach()))
        if cfg.log_every and (step + 1) % cfg.log_every == 0:
            print(f"step {step + 1}/{cfg.steps}  loss {losses[-1]:.4f}  "
                  f"sigma {trace[-1]:.3f}", flush=True)
    return TrainResult(model=model, blur=blur, losses=losses, sigma_trace=trace)


def infer_probmap(model: UNet, image: np.ndarray) -> np.ndarray:
    """Per-pixel hole probability for a raw image, same shape as input."""
    model.eval()
    x = torch.from_numpy(standardize(image))[None, None]
    x, height, width = pad_to_grid(x, 2 ** model.depth)
    with torch.no_grad():
        logits = model(x)[..., :height, :width]
        pred = torch.sigmoid(logits)
    return pred[0, 0].numpy().clip(0.0, 1.0).astype(np.float32)


def save_checkpoint(path: str | os.PathLike, model: UNet,
                    blur: GaussianBlur) -> None:
    torch.save({
        "kind": "gridlearn-unet",
        "depth": model.spec.depth,
        "channels": model.spec.channels,
        "head_bias": model.spec.head_bias,
        "model": model.state_dict(),
        "blur": blur.state_dict(),
    }, path)


def load_checkpoint(path: str | os.PathLike) -> tuple[UNet, GaussianBlur]:
    doc = torch.load(path, map_location="cpu", weights_only=True)
    if doc.get("kind") != "gridlearn-unet":
        raise ValueError(f"{path} is not a detector checkpoint")
    model = UNet(UNetSpec(depth=doc["depth"], channels=doc["channels"],
                          head_bias=doc.get("head_bias", -10.0)))
    model.load_state_dict(doc["model"])
    blur = GaussianBlur()
    blur.load_state_dict(doc["blur"])
    return model, blur

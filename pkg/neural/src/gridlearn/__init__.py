"""Learned hole detection and crop scoring for grid atlas datasets.

Consumes the detection pipeline's on-disk outputs (MRC images, PMAP
probability maps, truth sidecars, selections CSV) and produces the same
formats back, so the two toolchains compose through files alone.
"""

from .cnn import (CNNSpec, CropClassifier, load_classifier, save_classifier,
                  score_crops, train_classifier)
from .data import (build_target, extract_centroids, make_crop_fixtures,
                   point_recall, standardize)
from .formats import (Dataset, FormatError, ImageEntry, read_mrc, read_pmap,
                      read_scores, read_selections, read_truth, scan_dataset,
                      write_pmap, write_scores)
from .unet import (GaussianBlur, TrainConfig, TrainResult, UNet, UNetSpec,
                   infer_probmap, load_checkpoint, pad_to_grid,
                   save_checkpoint, train_unet, weighted_bce)

__all__ = [
    "CNNSpec", "CropClassifier", "Dataset", "FormatError", "GaussianBlur",
    "ImageEntry", "TrainConfig", "TrainResult", "UNet", "UNetSpec",
    "build_target", "extract_centroids", "infer_probmap", "load_checkpoint",
    "load_classifier", "make_crop_fixtures", "pad_to_grid", "point_recall",
    "read_mrc", "read_pmap", "read_scores", "read_selections", "read_truth",
    "save_checkpoint", "save_classifier", "scan_dataset", "score_crops",
    "standardize", "train_classifier", "train_unet", "weighted_bce",
    "write_pmap", "write_scores",
]

__version__ = "0.1.0"

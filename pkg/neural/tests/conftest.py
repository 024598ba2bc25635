"""Shared fixtures.

Datasets come from the detection pipeline's own CLI so every test
exercises the real on-disk interface; nothing here imports that package.
The detector is trained once per pytest session because a full training
run takes minutes; GRIDLEARN_ACCEPT_STEPS overrides the step budget.
"""

import os
import shutil
import subprocess

import numpy as np
import pytest

import gridlearn

ACCEPT_STEPS = int(os.environ.get("GRIDLEARN_ACCEPT_STEPS", "700"))
HOLDOUT_SESSION = "s03"


def synth_dataset(dest, sessions: int, images: int, seed: int,
                  invert: bool = False, size: int = 256) -> None:
    """Generate a hole dataset with the pipeline CLI."""
    if shutil.which("gridscout") is None:
        pytest.fail("the gridscout CLI must be installed to generate fixtures")
    cmd = [
        "gridscout", "synth", "--out-dir", str(dest), "--kind", "medmag",
        "--sessions", str(sessions), "--images", str(images),
        "--seed", str(seed),
        "--set", f"width={size}", "--set", f"height={size}",
        "--set", "spacing=36",
    ]
    if invert:
        cmd += ["--set", "invert=true"]
    subprocess.run(cmd, check=True, capture_output=True, text=True)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("small") / "holes"
    synth_dataset(root, sessions=2, images=3, seed=11, size=192)
    return gridlearn.scan_dataset(root)


@pytest.fixture(scope="session")
def hole_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept") / "holes"
    synth_dataset(root, sessions=4, images=50, seed=77)
    return gridlearn.scan_dataset(root)


@pytest.fixture(scope="session")
def hole_dataset_inverted(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept-inv") / "holes"
    synth_dataset(root, sessions=4, images=50, seed=77, invert=True)
    return gridlearn.scan_dataset(root)


def training_samples(dataset, skip_session):
    """(image, picks) pairs for every image outside `skip_session`."""
    picks = gridlearn.read_selections(dataset.selections_path)
    samples = []
    for entry in dataset.images:
        if entry.session_id == skip_session:
            continue
        image, _ = gridlearn.read_mrc(entry.mrc_path)
        pts = picks.get((entry.session_id, entry.image_id),
                        np.zeros((0, 2), dtype=np.float64))
        samples.append((image, pts))
    return samples


@pytest.fixture(scope="session")
def trained_detector(hole_dataset):
    samples = training_samples(hole_dataset, HOLDOUT_SESSION)
    return gridlearn.train_unet(samples,
                                gridlearn.TrainConfig(steps=ACCEPT_STEPS,
                                                      seed=0))

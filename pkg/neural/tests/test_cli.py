"""End-to-end command line flows on a small pipeline-written dataset."""

import csv
import math

import pytest

import gridlearn
from gridlearn.cli import main


@pytest.fixture(scope="module")
def workspace(small_dataset, tmp_path_factory):
    return small_dataset, tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def tiny_model(workspace):
    dataset, out = workspace
    model_path = out / "unet.pt"
    trace_path = out / "sigma.csv"
    code = main([
        "train-unet", "--data", dataset.root, "--out", str(model_path),
        "--holdout", "s01", "--steps", "4", "--depth", "4", "--seed", "3",
        "--sigma-trace", str(trace_path),
    ])
    assert code == 0
    return model_path, trace_path


def test_train_writes_checkpoint_and_trace(tiny_model):
    model_path, trace_path = tiny_model
    assert model_path.exists()
    with open(trace_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    assert float(rows[0]["sigma"]) == pytest.approx(math.e, abs=1e-5)


def test_infer_and_eval_flow(workspace, tiny_model, capsys):
    dataset, out = workspace
    model_path, _ = tiny_model
    pmap_dir = out / "pmaps"
    code = main(["infer", "--model", str(model_path), "--data", dataset.root,
                 "--session", "s01", "--out-dir", str(pmap_dir)])
    assert code == 0
    written = sorted(pmap_dir.glob("*.pmap"))
    assert len(written) == 3
    pmap = gridlearn.read_pmap(written[0])
    assert pmap.shape == (192, 192)
    assert 0.0 <= pmap.min() and pmap.max() <= 1.0

    capsys.readouterr()
    code = main(["eval-recall", "--data", dataset.root, "--session", "s01",
                 "--pmaps", str(pmap_dir)])
    assert code == 0
    text = capsys.readouterr().out
    assert "overall recall" in text
    assert text.count("s01/") == 3


def test_infer_is_deterministic(workspace, tiny_model):
    dataset, out = workspace
    model_path, _ = tiny_model
    first = out / "det1"
    again = out / "det2"
    for dest in (first, again):
        code = main(["infer", "--model", str(model_path), "--data",
                     dataset.root, "--session", "s01", "--out-dir", str(dest)])
        assert code == 0
    for path in sorted(first.glob("*.pmap")):
        assert (again / path.name).read_bytes() == path.read_bytes()


def test_crop_classifier_flow(workspace):
    _, out = workspace
    crops_dir = out / "crops"
    code = main(["synth-crops", "--out", str(crops_dir), "--count", "12",
                 "--seed", "2"])
    assert code == 0
    assert len(list(crops_dir.glob("*.npy"))) == 12

    model_path = out / "cls.pt"
    code = main(["train-cnn", "--crops", str(crops_dir), "--out",
                 str(model_path), "--variant", "hole", "--head", "avg",
                 "--seed", "1"])
    assert code == 0

    scores_path = out / "scores.csv"
    code = main(["score-crops", "--model", str(model_path), "--crops",
                 str(crops_dir), "--out", str(scores_path)])
    assert code == 0
    rows = gridlearn.read_scores(scores_path)
    assert len(rows) == 12
    assert {r[2] for r in rows} == {0, 1}
    assert all(0.0 <= r[1] <= 1.0 for r in rows)


def test_cli_reports_errors_with_exit_code_2(workspace, tmp_path, capsys):
    dataset, _ = workspace
    bad = tmp_path / "missing.pt"
    code = main(["infer", "--model", str(bad), "--data", dataset.root,
                 "--out-dir", str(tmp_path / "x")])
    assert code == 2
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["train-unet", "--data", dataset.root, "--out",
              str(tmp_path / "m.pt"), "--holdout", "s99"])

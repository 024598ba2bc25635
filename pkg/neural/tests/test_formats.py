"""File interface checks against pipeline-written datasets."""

import struct

import numpy as np
import pytest

import gridlearn


def test_scan_dataset_layout(small_dataset):
    assert small_dataset.kind == "medmag"
    assert small_dataset.sessions == ("s00", "s01")
    assert len(small_dataset.images) == 6
    for entry in small_dataset.images:
        assert entry.pmap_path is not None
        assert entry.truth_path is not None
    assert small_dataset.selections_path is not None
    assert small_dataset.session("s01")[0].session_id == "s01"
    with pytest.raises(KeyError):
        small_dataset.session("s99")


def test_read_mrc_image(small_dataset):
    image, pixel_size = gridlearn.read_mrc(small_dataset.images[0].mrc_path)
    assert image.shape == (192, 192)
    assert image.dtype == np.float32
    assert np.isfinite(image).all()
    assert image.std() > 0
    assert pixel_size is None or pixel_size > 0


def test_read_mrc_rejects_bad_headers(small_dataset, tmp_path):
    with open(small_dataset.images[0].mrc_path, "rb") as fh:
        raw = bytearray(fh.read())

    def write_variant(mutate):
        data = bytearray(raw)
        mutate(data)
        path = tmp_path / "bad.mrc"
        path.write_bytes(data)
        return path

    path = write_variant(lambda d: struct.pack_into("<i", d, 8, 3))  # nz = 3
    with pytest.raises(gridlearn.FormatError, match="stacks"):
        gridlearn.read_mrc(path)
    path = write_variant(lambda d: struct.pack_into("<i", d, 12, 5))  # mode 5
    with pytest.raises(gridlearn.FormatError, match="mode"):
        gridlearn.read_mrc(path)
    path = write_variant(lambda d: d.__setitem__(slice(212, 214), b"\x11\x11"))
    with pytest.raises(gridlearn.FormatError, match="big-endian"):
        gridlearn.read_mrc(path)
    path = tmp_path / "short.mrc"
    path.write_bytes(raw[:100])
    with pytest.raises(gridlearn.FormatError, match="truncated"):
        gridlearn.read_mrc(path)


def test_pmap_read_write_is_byte_stable(small_dataset, tmp_path):
    src = small_dataset.images[0].pmap_path
    with open(src, "rb") as fh:
        original = fh.read()
    pmap = gridlearn.read_pmap(src)
    assert pmap.dtype == np.float32
    assert 0.0 <= pmap.min() and pmap.max() <= 1.0
    out = tmp_path / "copy.pmap"
    gridlearn.write_pmap(out, pmap)
    assert out.read_bytes() == original


def test_write_pmap_validates_input(tmp_path):
    with pytest.raises(ValueError, match="2-D"):
        gridlearn.write_pmap(tmp_path / "x.pmap", np.zeros(5))
    bad = np.zeros((4, 4))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        gridlearn.write_pmap(tmp_path / "x.pmap", bad)
    # out-of-range values are clipped, not rejected
    gridlearn.write_pmap(tmp_path / "x.pmap", np.full((4, 4), 1.5))
    assert gridlearn.read_pmap(tmp_path / "x.pmap").max() == 1.0


def test_read_truth_fields(small_dataset):
    truth = gridlearn.read_truth(small_dataset.images[0].truth_path)
    n = len(truth["centers"])
    assert truth["centers"].shape == (n, 2)
    assert truth["interior"].shape == (n,)
    assert truth["deleted"].shape == (n,)
    assert truth["interior"].dtype == bool
    assert truth["spacing"] == pytest.approx(36.0)
    assert truth["interior"].any()
    # interior holes sit inside the frame with at least half a pitch spare
    inside = truth["centers"][truth["interior"]]
    assert inside.min() > 0 and inside.max() < 192


def test_read_selections_groups(small_dataset):
    groups = gridlearn.read_selections(small_dataset.selections_path)
    keys = {(e.session_id, e.image_id) for e in small_dataset.images}
    assert set(groups) <= keys
    total = sum(len(pts) for pts in groups.values())
    assert total > 0
    for pts in groups.values():
        assert pts.shape[1] == 2
        assert pts.min() >= 0 and pts.max() < 192


def test_scores_round_trip(tmp_path):
    rows = [("crop00001", 0.125, 1), ("crop00002", 0.875, 0),
            ("crop00003", 0.5, None)]
    path = tmp_path / "scores.csv"
    gridlearn.write_scores(path, rows)
    back = gridlearn.read_scores(path)
    assert [r[0] for r in back] == [r[0] for r in rows]
    assert [r[2] for r in back] == [r[2] for r in rows]
    for (_, score, _), (_, expected, _) in zip(back, rows):
        assert score == pytest.approx(expected, abs=1e-6)
    with pytest.raises(gridlearn.FormatError, match="header"):
        bad = tmp_path / "bad.csv"
        bad.write_text("id,value\n1,2\n")
        gridlearn.read_scores(bad)

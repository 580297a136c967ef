import json
import struct

import numpy as np
import pytest

from anchorloc import formats
from anchorloc.anchors import AnchorSet
from anchorloc.errors import FormatError, InvalidManifest


def test_anchor_file_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    rows = rng.standard_normal((3, 5)).astype(np.float32).astype(np.float64)
    anchors = AnchorSet.from_rows(rows, ["a", "b", "c"], orthogonalized=True)
    path = tmp_path / "a.tdla"
    formats.save_anchors(path, anchors)
    loaded = formats.load_anchors(path)
    assert np.array_equal(loaded.anchors, anchors.anchors)
    assert loaded.class_names == ("a", "b", "c")
    assert loaded.orthogonalized


def test_anchor_file_layout(tmp_path):
    anchors = AnchorSet.from_rows(np.eye(2), ["x", "y"], orthogonalized=False)
    path = tmp_path / "a.tdla"
    formats.save_anchors(path, anchors)
    buf = path.read_bytes()
    assert buf[:4] == b"TDLA"
    version, k, d = struct.unpack_from("<III", buf, 4)
    assert (version, k, d) == (1, 2, 2)
    assert buf[16] == 0  # orthogonalized flag
    names_len = struct.unpack_from("<I", buf, 17)[0]
    assert json.loads(buf[21 : 21 + names_len]) == ["x", "y"]
    floats = np.frombuffer(buf, dtype="<f4", offset=21 + names_len)
    np.testing.assert_array_equal(floats.reshape(2, 2), np.eye(2, dtype=np.float32))


def test_cam_roundtrip_and_header(tmp_path):
    cam = np.arange(12, dtype=np.float64).reshape(3, 4)
    path = tmp_path / "c.tdlm"
    formats.save_cam(path, cam)
    assert path.read_bytes()[:4] == b"TDLM"
    np.testing.assert_array_equal(formats.load_cam(path), cam)
    assert formats.cam_shape(path) == (3, 4)


def test_features_roundtrip(tmp_path):
    grid = np.random.default_rng(1).normal(size=(4, 5, 6)).astype(np.float32)
    path = tmp_path / "f.tdlf"
    formats.save_features(path, grid)
    np.testing.assert_array_equal(formats.load_features(path), grid.astype(np.float64))


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.tdlm"
    path.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(FormatError):
        formats.load_cam(path)


def test_truncated_payload_rejected(tmp_path):
    cam = np.ones((4, 4))
    path = tmp_path / "c.tdlm"
    formats.save_cam(path, cam)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(FormatError):
        formats.load_cam(path)


def test_checkpoint_roundtrip(tmp_path):
    arrays = {
        "w": np.random.default_rng(2).normal(size=(3, 4)).astype(np.float32),
        "b": np.zeros((), dtype=np.float32),
    }
    meta = {"step": 17, "note": "x"}
    path = tmp_path / "m.ckpt"
    formats.save_checkpoint(path, arrays, meta)
    loaded, header = formats.load_checkpoint(path)
    assert header["step"] == 17 and header["note"] == "x"
    for name in arrays:
        np.testing.assert_array_equal(loaded[name], arrays[name])


def test_manifest_roundtrip_and_validation(tmp_path):
    record = {
        "id": "img_0",
        "label": 3,
        "features_path": "f/img_0.tdlf",
        "cam_path": "c/img_0.tdlm",
        "gt_box": [0, 0, 4, 4],
        "split": "train",
    }
    path = tmp_path / "manifest.jsonl"
    formats.save_manifest(path, [record])
    assert formats.load_manifest(path) == [record]

    (tmp_path / "empty.jsonl").write_text("")
    with pytest.raises(InvalidManifest):
        formats.load_manifest(tmp_path / "empty.jsonl")

    bad = dict(record)
    del bad["gt_box"]
    formats.save_manifest(tmp_path / "bad.jsonl", [bad])
    with pytest.raises(InvalidManifest):
        formats.load_manifest(tmp_path / "bad.jsonl")

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from facefake.core import (
    BoundingBox,
    DataError,
    DatasetManifest,
    FaceCrop,
    FramePrediction,
    ImageBuffer,
    Label,
    Landmarks,
    ManifestEntry,
    VideoPrediction,
    load_manifest,
    save_manifest,
    validate_manifest,
)


def entry(i, vid="v", label=Label.REAL, original=None, folder=None, path=None):
    return ManifestEntry(path or f"crops/{vid}/{i}_0.png", vid, i, label, original, folder)


# -- ImageBuffer -------------------------------------------------------------


def test_image_buffer_shape_and_flags():
    img = ImageBuffer(np.zeros((4, 5, 3), np.uint8))
    assert (img.height, img.width, img.channels) == (4, 5, 3)
    assert img.data.size == 4 * 5 * 3
    gray = ImageBuffer(np.zeros((4, 5)))
    assert gray.channels == 1


def test_image_buffer_is_read_only():
    src = np.zeros((2, 2, 3), np.uint8)
    img = ImageBuffer(src)
    src[0, 0, 0] = 9
    assert img.data[0, 0, 0] == 0
    with pytest.raises(ValueError):
        img.data[0, 0, 0] = 1


@pytest.mark.parametrize("data,normalized", [
    (np.full((2, 2, 3), 256.0), False),
    (np.full((2, 2, 3), -1.0), False),
    (np.full((2, 2, 3), 1.5), True),
    (np.zeros((2, 2, 2)), False),
    (np.zeros((0, 2, 3)), False),
])
def test_image_buffer_rejects_bad_data(data, normalized):
    with pytest.raises(ValueError):
        ImageBuffer(data, normalized=normalized)


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(np.uint8, hnp.array_shapes(min_dims=3, max_dims=3, min_side=1, max_side=8)
                  .filter(lambda s: s[2] in (1, 3))))
def test_normalize_round_trip(arr):
    img = ImageBuffer(arr)
    back = img.normalize().denormalize()
    assert np.max(np.abs(back.data.astype(np.float64) - arr) / 255.0) <= 1 / 510


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(np.float64, (3, 4, 3), elements=st.floats(0, 1)))
def test_denormalize_error_bound(arr):
    img = ImageBuffer(arr, normalized=True)
    err = np.abs(img.denormalize().data / 255.0 - arr)
    assert err.max() <= 1 / 510 + 1e-12


# -- value objects -----------------------------------------------------------


def test_bounding_box_invariants():
    BoundingBox(0, 0, 1, 1, 0.5)
    with pytest.raises(ValueError):
        BoundingBox(1, 0, 1, 1, 0.5)
    with pytest.raises(ValueError):
        BoundingBox(0, 2, 1, 1, 0.5)
    with pytest.raises(ValueError):
        BoundingBox(0, 0, 1, 1, 1.2)


def test_landmarks_five_points():
    pts = Landmarks(((1, 1), (2, 1), (1.5, 2), (1, 3), (2, 3)))
    assert pts.within(4, 4)
    assert not pts.within(3, 4)
    assert list(pts.named()) == ["left_eye", "right_eye", "nose", "mouth_left", "mouth_right"]
    with pytest.raises(ValueError):
        Landmarks(((1, 1),) * 4)


def test_prediction_ranges():
    with pytest.raises(ValueError):
        FramePrediction("v", 0, 1.01)
    with pytest.raises(ValueError):
        VideoPrediction("v", -0.1, 1, 0)
    with pytest.raises(ValueError):
        VideoPrediction("v", 0.5, -1, 0)


def test_face_crop_fields():
    crop = FaceCrop(ImageBuffer(np.zeros((3, 3, 3), np.uint8)), "v", 0, BoundingBox(0, 0, 1, 1, 1), 0.3)
    assert crop.label is Label.UNKNOWN
    with pytest.raises(ValueError):
        FaceCrop(crop.image, "v", -1, crop.source_box, 0.3)


def test_unknown_has_no_target():
    assert Label.FAKE.target == 1 and Label.REAL.target == 0
    with pytest.raises(ValueError):
        Label.UNKNOWN.target


# -- manifest ----------------------------------------------------------------


def test_validate_empty_manifest():
    assert validate_manifest(DatasetManifest()) == []


def test_validate_duplicate_crop_path():
    m = DatasetManifest((entry(0, path="a.png"), entry(1, path="a.png")))
    problems = validate_manifest(m)
    assert len(problems) == 1 and problems[0].rule == "unique_crop_path"


def test_validate_missing_original():
    # ten entries: 5 real frames of r0, 4 fakes paired with r0, 1 fake paired with a missing video
    entries = [entry(i, "r0") for i in range(5)]
    entries += [entry(i, "f0", Label.FAKE, "r0") for i in range(4)]
    entries += [entry(0, "f1", Label.FAKE, "r9")]
    problems = validate_manifest(DatasetManifest(tuple(entries)))
    assert len(problems) == 1
    assert problems[0].rule == "original_reference" and problems[0].index == 9


def test_manifest_round_trip(tmp_path):
    m = DatasetManifest((entry(0, "r0", folder=3), entry(1, "f0", Label.FAKE, "r0", 3), entry(2, "r1")))
    path = tmp_path / "manifest.json"
    save_manifest(m, path)
    assert load_manifest(path) == m
    doc = json.loads(path.read_text())
    assert doc["version"] == 1
    assert doc["entries"][1]["label"] == "FAKE"
    assert set(doc["entries"][2]) == {"crop_path", "video_id", "frame_index", "label", "original_video_id"}


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1000), st.sampled_from([Label.REAL, Label.FAKE]),
                          st.one_of(st.none(), st.text("abc", min_size=1, max_size=4)),
                          st.one_of(st.none(), st.integers(0, 49))), max_size=12))
def test_manifest_round_trip_property(rows):
    m = DatasetManifest(tuple(ManifestEntry(f"c/{k}.png", f"v{idx % 3}", idx, lab, orig, fold)
                              for k, (idx, lab, orig, fold) in enumerate(rows)))
    assert DatasetManifest.from_json(json.loads(json.dumps(m.to_json()))) == m


def test_load_manifest_errors_are_distinct(tmp_path):
    with pytest.raises(OSError):
        load_manifest(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(DataError):
        load_manifest(bad)
    wrong = tmp_path / "wrong.json"
    wrong.write_text(json.dumps({"version": 2, "entries": []}))
    with pytest.raises(DataError):
        load_manifest(wrong)

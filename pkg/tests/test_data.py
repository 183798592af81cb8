import json

import numpy as np
import pandas as pd
import pytest

import graspdict.data as d
from graspdict.numerics import make_rng
from graspdict.synth import synth_generate


def _record(sequence_id, frame_idx, labeled=True):
    pose2d = np.full((2, 29), float(frame_idx))
    pose3d = np.full((3, 29), float(frame_idx)) if labeled else None
    return d.DatasetRecord(sequence_id, frame_idx, pose2d, pose3d)


def _line(**entry):
    base = {"sequence_id": "s1", "frame_idx": 0,
            "points_2d": np.zeros((29, 2)).tolist()}
    base.update(entry)
    return json.dumps(base)


def test_load_fixture():
    records = d.load_dataset("tests/fixtures/tiny.jsonl")
    assert len(records) == 3
    assert records[0].pose2d.shape == (2, 29)
    assert records[0].pose3d.shape == (3, 29)
    assert records[0].pose2d[:, 1].tolist() == [1.0, 2.0]
    assert records[2].pose3d is None
    assert not records[2].labeled
    assert records[1].contact is True


def test_save_and_load(tmp_path):
    records = synth_generate(1, 4, 0)
    records.append(_record("other", 3, labeled=False))
    path = str(tmp_path / "data.jsonl")
    d.save_dataset(path, records)
    loaded = d.load_dataset(path)
    assert [record.key for record in loaded] == [record.key
                                                 for record in records]
    np.testing.assert_array_equal(loaded[2].pose3d, records[2].pose3d)
    assert loaded[-1].pose3d is None


def test_wrong_keypoint_count():
    with pytest.raises(d.ValidationError, match="29x2"):
        d.load_dataset("tests/fixtures/wrong_keypoints.jsonl")


@pytest.mark.parametrize("line, error", [
    ("{not json", d.ParseError),
    ("[1, 2]", d.ValidationError),
    (_line(frame_idx=-1), d.ValidationError),
    (_line(frame_idx=True), d.ValidationError),
    (_line(sequence_id=5), d.ValidationError),
    (_line(contact="yes"), d.ValidationError),
    (_line(points_2d=[["a", "b"]] * 29), d.ValidationError),
    (json.dumps({"sequence_id": "s1", "frame_idx": 0}), d.ValidationError)])
def test_invalid_lines(tmp_path, line, error):
    path = tmp_path / "bad.jsonl"
    path.write_text(line + "\n")
    with pytest.raises(error):
        d.load_dataset(str(path))


def test_non_finite_values(tmp_path):
    points = np.zeros((29, 2)).tolist()
    points[4][0] = float("nan")
    path = tmp_path / "nan.jsonl"
    path.write_text(_line(points_2d=points) + "\n")
    with pytest.raises(d.ValidationError):
        d.load_dataset(str(path))


def test_repeated_frame(tmp_path):
    path = tmp_path / "repeat.jsonl"
    path.write_text(_line() + "\n\n" + _line() + "\n")
    with pytest.raises(d.ValidationError, match="repeats"):
        d.load_dataset(str(path))


def test_one_labeled_subsequence_of_hundred_frames():
    records = [_record("s1", frame) for frame in range(100)]
    split = d.split_semi_supervised(records, 0.05, seed=7)
    assert split.subsequences == 20
    assert len(split.labeled) == 5
    assert len(split.unlabeled) == 95
    frames = [record.frame_idx for record in split.labeled]
    assert frames == list(range(frames[0], frames[0] + 5))
    assert frames[0] % 5 == 0
    again = d.split_semi_supervised(records, 0.05, seed=7)
    assert [r.key for r in again.labeled] == [r.key for r in split.labeled]


def test_split_covers_every_frame_once():
    records = [_record(f"s{sequence}", frame)
               for sequence in range(3) for frame in range(12)]
    split = d.split_semi_supervised(records, 0.3, seed=1)
    keys = [record.key for record in split.labeled + split.unlabeled]
    assert sorted(keys) == sorted(record.key for record in records)
    assert all(record.labeled for record in split.labeled)
    assert not any(record.labeled for record in split.unlabeled)
    # 3 sequences of 12 frames give 3 * 3 subsequences, ceil(0.3 * 9) = 3.
    assert len(split.labeled_subsequences) == 3


def test_split_needs_labels_where_sampled():
    records = [_record("s1", frame, labeled=False) for frame in range(10)]
    with pytest.raises(d.MissingLabels):
        d.split_semi_supervised(records, 1.0, seed=0)


def test_split_ratio_range():
    with pytest.raises(d.ValidationError):
        d.split_semi_supervised([_record("s1", 0)], 0.0, seed=0)


def test_split_by_sequence():
    records = [_record(f"s{sequence}", frame)
               for sequence in range(10) for frame in range(3)]
    train, test = d.split_by_sequence(records, 0.2, seed=3)
    test_ids = {record.sequence_id for record in test}
    train_ids = {record.sequence_id for record in train}
    assert len(test_ids) == 2
    assert not test_ids & train_ids
    assert len(train) + len(test) == 30


def test_group_by_sequence_uses_natural_order():
    records = [_record("s10", 1), _record("s2", 1), _record("s2", 0)]
    groups = d.group_by_sequence(records)
    assert list(groups) == ["s2", "s10"]
    assert [record.frame_idx for record in groups["s2"]] == [0, 1]


def test_interpolate_pseudo_labels():
    labeled = [_record("s1", 0), _record("s1", 4)]
    unlabeled = [_record("s1", 1, labeled=False),
                 _record("s1", 6, labeled=False),
                 _record("s2", 0, labeled=False)]
    split = d.DatasetSplit(labeled=labeled, unlabeled=unlabeled, seed=0,
                           ratio=0.5)
    pairs = d.interpolate_pseudo_labels(split)
    assert len(pairs) == 2
    np.testing.assert_allclose(pairs[0][1], np.full((3, 29), 1.0))
    np.testing.assert_allclose(pairs[1][1], np.full((3, 29), 4.0))


def test_scramble_hand_joints():
    pose = np.arange(87.0).reshape(3, 29)
    scrambled = d.scramble_hand_joints(pose, make_rng(0, "test"))
    np.testing.assert_array_equal(scrambled[:, 21:], pose[:, 21:])
    assert not np.array_equal(scrambled[:, :21], pose[:, :21])
    assert sorted(scrambled[0, :21]) == sorted(pose[0, :21])


def test_contact_only():
    records = synth_generate(1, 3, 0)
    records.append(_record("s1", 0))
    assert len(d.contact_only(records)) == 3


def test_transform_dataset(tmp_path):
    records = synth_generate(1, 3, 0) + [_record("s1", 0, labeled=False)]
    output = str(tmp_path / "h.csv")
    table = d.transform_dataset(records, output)
    assert table.shape == (3, 86)
    pd.testing.assert_frame_equal(pd.read_csv(output), table)

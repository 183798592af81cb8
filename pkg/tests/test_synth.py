import numpy as np
import pytest

import graspdict.synth as s
from graspdict import InputError
from graspdict.geometry import cyl_encode, object_frame_from_corners


def test_generate_layout():
    records = s.synth_generate(3, 4, seed=1)
    assert len(records) == 12
    assert [record.sequence_id for record in records[:5]] == \
        ["synth0000"] * 4 + ["synth0001"]
    assert [record.frame_idx for record in records[:4]] == [0, 1, 2, 3]
    assert all(record.contact for record in records)
    assert records[0].pose3d.shape == (3, 29)
    assert records[0].pose2d.shape == (2, 29)


def test_generation_is_deterministic():
    first = s.synth_generate(2, 3, seed=5)
    second = s.synth_generate(2, 3, seed=5)
    other = s.synth_generate(2, 3, seed=6)
    np.testing.assert_array_equal(first[4].pose3d, second[4].pose3d)
    assert not np.array_equal(first[4].pose3d, other[4].pose3d)


def test_poses_are_valid_grasps():
    for record in s.synth_generate(3, 5, seed=2):
        frame = object_frame_from_corners(record.pose3d[:, 21:])
        assert np.all(record.pose3d[2] > 0)
        h = cyl_encode(record.pose3d, frame)
        assert np.all(np.isfinite(h))
        # Wrist stays within reach of the box.
        assert np.linalg.norm(record.pose3d[:, 0] - frame.origin) < 300.0


def test_projection():
    points = np.array([[0.0, 60.0], [0.0, -30.0], [600.0, 300.0]])
    pixels = s.project_pinhole(points)
    np.testing.assert_allclose(pixels, [[320.0, 440.0], [240.0, 180.0]])
    record = s.synth_generate(1, 1, seed=0)[0]
    np.testing.assert_allclose(record.pose2d, s.project_pinhole(record.pose3d))


def test_bone_lengths_are_kept():
    synthesizer = s.GraspSynthesizer(0, 0)
    hand = synthesizer.hand_in_object_frame()
    index_tip, index_distal = hand[:, 8], hand[:, 7]
    assert np.linalg.norm(index_tip - index_distal) == pytest.approx(20.0)


def test_needs_frames():
    with pytest.raises(InputError):
        s.synth_generate(0, 5, seed=0)

"""Procedural grasp sequences for desk-scale experiments.

Every sequence holds one box of random size and pose and a hand that
approaches it from a random direction with curled fingers wrapping
towards the nearest face. The grasp is described by a handful of
parameters (approach azimuth and elevation, wrist distance, common
finger curl, per-finger curl noise) that perform a small random walk
from frame to frame while the box drifts slightly. 2D keypoints are the
exact pinhole projection of the 3D keypoints.
"""

import logging

import numpy as np
from scipy.spatial.transform import Rotation

from graspdict import InputError
from graspdict.data import DatasetRecord
from graspdict.geometry import canonical_box
from graspdict.numerics import make_rng

logger = logging.getLogger(__name__)

FOCAL_LENGTH = 600.0
PRINCIPAL_POINT = (320.0, 240.0)

# (forward, lateral) offset of each finger base from the wrist in mm
FINGER_BASES = {"thumb": (25.0, 35.0), "index": (80.0, 24.0),
                "middle": (85.0, 8.0), "ring": (80.0, -8.0),
                "pinky": (70.0, -22.0)}
BONE_LENGTHS = {"thumb": (38.0, 32.0, 26.0), "index": (42.0, 25.0, 20.0),
                "middle": (46.0, 28.0, 22.0), "ring": (43.0, 26.0, 21.0),
                "pinky": (34.0, 20.0, 18.0)}
THUMB_CURL_FACTOR = 0.7
WRIST_BACKSET = 50.0

ELEVATION_RANGE = (-0.7, 0.7)
DISTANCE_RANGE = (25.0, 55.0)
CURL_RANGE = (0.3, 0.8)
NOISE_RANGE = (-0.1, 0.1)
WALK_STEPS = {"azimuth": 0.03, "elevation": 0.02, "distance": 1.0,
              "curl": 0.02, "noise": 0.01}


def project_pinhole(points, focal=FOCAL_LENGTH, principal=PRINCIPAL_POINT):
    """Project (3, n) camera points to (2, n) pixels."""
    points = np.asarray(points, dtype=np.float64)
    return np.vstack([focal * points[0] / points[2] + principal[0],
                      focal * points[1] / points[2] + principal[1]])


def _unit(vector):
    return vector / np.linalg.norm(vector)


class GraspSynthesizer:

    def __init__(self, seed, sequence_index):
        self._rng = make_rng(seed, "synth", sequence_index)
        rng = self._rng
        self._half_extents = rng.uniform(20.0, 60.0, size=3)
        self._rotation = Rotation.random(random_state=rng)
        self._translation = np.array([rng.uniform(-60.0, 60.0),
                                      rng.uniform(-40.0, 40.0),
                                      rng.uniform(380.0, 520.0)])
        self._azimuth = rng.uniform(0.0, 2.0 * np.pi)
        self._elevation = rng.uniform(*ELEVATION_RANGE)
        self._distance = rng.uniform(*DISTANCE_RANGE)
        self._curl = rng.uniform(*CURL_RANGE)
        self._noise = rng.uniform(*NOISE_RANGE, size=len(FINGER_BASES))

    def hand_in_object_frame(self):
        """(3, 21) hand joints in the box frame."""
        approach = np.array([
            np.cos(self._elevation) * np.cos(self._azimuth),
            np.cos(self._elevation) * np.sin(self._azimuth),
            np.sin(self._elevation)])
        support = np.abs(approach) @ self._half_extents
        reference = np.array([0.0, 0.0, 1.0])
        if abs(approach @ reference) > 0.9:
            reference = np.array([1.0, 0.0, 0.0])
        forward = _unit(reference - (reference @ approach) * approach)
        normal = -approach
        lateral = np.cross(normal, forward)
        wrist = approach * (support + self._distance) - forward * WRIST_BACKSET
        joints = [wrist]
        for finger_index, finger in enumerate(FINGER_BASES):
            ahead, side = FINGER_BASES[finger]
            curl = self._curl + self._noise[finger_index]
            direction = forward
            if finger == "thumb":
                curl *= THUMB_CURL_FACTOR
                direction = _unit(0.6 * forward + 0.8 * lateral)
            joint = wrist + ahead * forward + side * lateral
            joints.append(joint)
            for segment, length in enumerate(BONE_LENGTHS[finger], start=1):
                angle = segment * curl
                joint = joint + length * (np.cos(angle) * direction +
                                          np.sin(angle) * normal)
                joints.append(joint)
        return np.column_stack(joints)

    def pose3d(self):
        rotation = self._rotation.as_matrix()
        hand = rotation @ self.hand_in_object_frame() + \
            self._translation[:, None]
        corners = canonical_box(self._half_extents, rotation,
                                self._translation)
        return np.hstack([hand, corners])

    def step(self):
        """Advance the grasp parameters and the box pose by one frame."""
        rng = self._rng
        self._azimuth += rng.normal(0.0, WALK_STEPS["azimuth"])
        self._elevation = np.clip(
            self._elevation + rng.normal(0.0, WALK_STEPS["elevation"]),
            *ELEVATION_RANGE)
        self._distance = np.clip(
            self._distance + rng.normal(0.0, WALK_STEPS["distance"]),
            *DISTANCE_RANGE)
        self._curl = np.clip(self._curl + rng.normal(0.0, WALK_STEPS["curl"]),
                             *CURL_RANGE)
        self._noise = np.clip(
            self._noise + rng.normal(0.0, WALK_STEPS["noise"],
                                     size=self._noise.shape), *NOISE_RANGE)
        self._rotation = Rotation.from_rotvec(
            rng.normal(0.0, 0.01, size=3)) * self._rotation
        self._translation = self._translation + rng.normal(0.0, 1.0, size=3)

    def frames(self, count):
        for _ in range(count):
            yield self.pose3d()
            self.step()


def synth_generate(n_sequences, frames_per_seq, seed):
    if n_sequences < 1 or frames_per_seq < 1:
        raise InputError("Need at least one sequence of at least one frame")
    records = []
    for sequence_index in range(n_sequences):
        synthesizer = GraspSynthesizer(seed, sequence_index)
        for frame_idx, pose3d in enumerate(synthesizer.frames(frames_per_seq)):
            records.append(DatasetRecord(
                sequence_id=f"synth{sequence_index:04d}", frame_idx=frame_idx,
                pose2d=project_pinhole(pose3d), pose3d=pose3d, contact=True))
    logger.info("- Generated %d sequences of %d frames", n_sequences,
                frames_per_seq)
    return records

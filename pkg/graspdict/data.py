"""Dataset records, the interchange file and semi-supervised splitting.

Interchange file
----------------

UTF-8 text, one JSON object per line::

    {"sequence_id": "s01", "frame_idx": 0,
     "points_2d": [[u, v], ...],        # 29 x 2, pixels
     "points_3d": [[x, y, z], ...],     # optional, 29 x 3, millimeters
     "contact": true}                   # optional

Keypoints are the 21 hand joints (wrist, then thumb to pinky with four
joints each from proximal to tip) followed by the 8 box corners in the
canonical order of ``graspdict.geometry``. Blank lines are ignored.
"""

import bisect
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from natsort import natsorted

from graspdict import InputError, NUM_HAND_JOINTS, NUM_KEYPOINTS
from graspdict.geometry import DegenerateBox, cyl_encode
from graspdict.numerics import make_rng

logger = logging.getLogger(__name__)

SUBSEQUENCE_LENGTH = 5


class ParseError(InputError):
    pass


class ValidationError(InputError):
    pass


class MissingLabels(InputError):
    pass


@dataclass
class DatasetRecord:
    sequence_id: str
    frame_idx: int
    pose2d: np.ndarray
    pose3d: np.ndarray = None
    labeled: bool = None
    contact: bool = None

    def __post_init__(self):
        self.pose2d = np.asarray(self.pose2d, dtype=np.float64)
        if self.pose3d is not None:
            self.pose3d = np.asarray(self.pose3d, dtype=np.float64)
        if self.labeled is None:
            self.labeled = self.pose3d is not None
        if self.labeled and self.pose3d is None:
            raise ValidationError(
                f"{self.sequence_id}/{self.frame_idx}: labeled record "
                f"without points_3d")

    @property
    def key(self):
        return self.sequence_id, self.frame_idx


@dataclass
class DatasetSplit:
    labeled: list
    unlabeled: list
    seed: int
    ratio: float
    subsequences: int = 0
    labeled_subsequences: list = field(default_factory=list)

    def labeled_arrays(self):
        """(N_L, 2, 29) inputs and (N_L, 3, 29) targets."""
        return stack_inputs(self.labeled), stack_targets(self.labeled)

    def unlabeled_inputs(self):
        return stack_inputs(self.unlabeled)


def stack_inputs(records):
    if not records:
        return np.zeros((0, 2, NUM_KEYPOINTS))
    return np.stack([record.pose2d for record in records])


def stack_targets(records):
    if not records:
        return np.zeros((0, 3, NUM_KEYPOINTS))
    missing = [record.key for record in records if record.pose3d is None]
    if missing:
        raise MissingLabels(f"No 3D pose for {missing[0]}")
    return np.stack([record.pose3d for record in records])


def _points(value, columns, field_name, line_number):
    try:
        points = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise ValidationError(
            f"line {line_number}: '{field_name}' is not a numeric array")
    if points.shape != (NUM_KEYPOINTS, columns):
        raise ValidationError(
            f"line {line_number}: '{field_name}' must be {NUM_KEYPOINTS}x"
            f"{columns}, got {'x'.join(str(n) for n in points.shape)}")
    if not np.all(np.isfinite(points)):
        raise ValidationError(
            f"line {line_number}: '{field_name}' holds non-finite values")
    return points.T.copy()


def _record_from_json(entry, line_number):
    if not isinstance(entry, dict):
        raise ValidationError(f"line {line_number}: expected a JSON object")
    for key in ("sequence_id", "frame_idx", "points_2d"):
        if key not in entry:
            raise ValidationError(f"line {line_number}: missing '{key}'")
    if not isinstance(entry["sequence_id"], str):
        raise ValidationError(
            f"line {line_number}: 'sequence_id' must be a string")
    frame_idx = entry["frame_idx"]
    if isinstance(frame_idx, bool) or not isinstance(frame_idx, int) or \
            frame_idx < 0:
        raise ValidationError(
            f"line {line_number}: 'frame_idx' must be a non-negative integer")
    contact = entry.get("contact")
    if contact is not None and not isinstance(contact, bool):
        raise ValidationError(f"line {line_number}: 'contact' must be boolean")
    pose3d = entry.get("points_3d")
    return DatasetRecord(
        sequence_id=entry["sequence_id"], frame_idx=frame_idx,
        pose2d=_points(entry["points_2d"], 2, "points_2d", line_number),
        pose3d=None if pose3d is None else _points(
            pose3d, 3, "points_3d", line_number),
        contact=contact)


def load_dataset(path):
    records = []
    seen = set()
    with open(path, encoding="utf-8") as input_fh:
        for line_number, line in enumerate(input_fh, start=1):
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
            except json.JSONDecodeError as error:
                raise ParseError(f"{path}:{line_number}: {error.msg}")
            record = _record_from_json(entry, line_number)
            if record.key in seen:
                raise ValidationError(
                    f"line {line_number}: 'frame_idx' {record.frame_idx} "
                    f"repeats in sequence '{record.sequence_id}'")
            seen.add(record.key)
            records.append(record)
    logger.info("- Read %d records from %s", len(records), path)
    return records


def save_dataset(path, records):
    with open(path, "w", encoding="utf-8") as output_fh:
        for record in records:
            entry = {"sequence_id": record.sequence_id,
                     "frame_idx": int(record.frame_idx),
                     "points_2d": record.pose2d.T.tolist()}
            if record.pose3d is not None:
                entry["points_3d"] = record.pose3d.T.tolist()
            if record.contact is not None:
                entry["contact"] = bool(record.contact)
            output_fh.write(json.dumps(entry) + "\n")
    logger.info("- Wrote %d records to %s", len(records), path)


def contact_only(records):
    return [record for record in records if record.contact]


def group_by_sequence(records):
    """Sequence id -> records sorted by frame, ids in natural order."""
    sequences = defaultdict(list)
    for record in records:
        sequences[record.sequence_id].append(record)
    return {sequence_id: sorted(sequences[sequence_id],
                                key=lambda record: record.frame_idx)
            for sequence_id in natsorted(sequences)}


def split_semi_supervised(records, ratio, seed):
    """Label ⌈ratio · n⌉ random 5-frame subsequences, the rest is unlabeled.

    Subsequences are consecutive frames within one sequence; the last one
    of a sequence may be shorter.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValidationError(f"ratio must lie in (0, 1], got {ratio}")
    subsequences = []
    for sequence_id, frames in group_by_sequence(records).items():
        for start in range(0, len(frames), SUBSEQUENCE_LENGTH):
            subsequences.append(frames[start:start + SUBSEQUENCE_LENGTH])
    count = min(len(subsequences),
                math.ceil(ratio * len(subsequences) - 1e-9))
    chosen = set(make_rng(seed, "split").choice(
        len(subsequences), size=count, replace=False).tolist()) \
        if subsequences else set()
    labeled = []
    unlabeled = []
    for index, frames in enumerate(subsequences):
        if index in chosen:
            for record in frames:
                if record.pose3d is None:
                    raise MissingLabels(
                        f"Frame {record.frame_idx} of '{record.sequence_id}' "
                        f"was sampled for labeling but has no points_3d")
                labeled.append(replace(record, labeled=True))
        else:
            unlabeled.extend(replace(record, labeled=False)
                             for record in frames)
    logger.info("- Labeled %d of %d subsequences (%d frames labeled, "
                "%d unlabeled)", count, len(subsequences), len(labeled),
                len(unlabeled))
    return DatasetSplit(labeled=labeled, unlabeled=unlabeled, seed=seed,
                        ratio=ratio, subsequences=len(subsequences),
                        labeled_subsequences=sorted(chosen))


def split_by_sequence(records, test_fraction, seed):
    """Seeded train/test partition by whole sequences."""
    sequences = group_by_sequence(records)
    sequence_ids = list(sequences)
    test_count = round(test_fraction * len(sequence_ids))
    if test_fraction > 0 and len(sequence_ids) > 1:
        test_count = min(max(test_count, 1), len(sequence_ids) - 1)
    order = make_rng(seed, "train-test").permutation(len(sequence_ids))
    test_ids = {sequence_ids[index] for index in order[:test_count]}
    train = [record for sequence_id in sequence_ids
             if sequence_id not in test_ids
             for record in sequences[sequence_id]]
    test = [record for sequence_id in sequence_ids if sequence_id in test_ids
            for record in sequences[sequence_id]]
    return train, test


def interpolate_pseudo_labels(split):
    """Temporal interpolation of 3D poses for the unlabeled frames.

    Frames between two labeled frames of their sequence get the linear
    interpolation, frames on one side only a copy of the nearest labeled
    frame. Sequences without any labeled frame are skipped.
    """
    labeled = group_by_sequence(split.labeled)
    frame_numbers = {sequence_id: [record.frame_idx for record in frames]
                     for sequence_id, frames in labeled.items()}
    pairs = []
    for record in split.unlabeled:
        frames = labeled.get(record.sequence_id)
        if not frames:
            continue
        numbers = frame_numbers[record.sequence_id]
        position = bisect.bisect_left(numbers, record.frame_idx)
        if position == 0:
            pose = frames[0].pose3d.copy()
        elif position == len(numbers):
            pose = frames[-1].pose3d.copy()
        else:
            before, after = frames[position - 1], frames[position]
            weight = (record.frame_idx - before.frame_idx) / (
                after.frame_idx - before.frame_idx)
            pose = (1.0 - weight) * before.pose3d + weight * after.pose3d
        pairs.append((record.pose2d, pose))
    logger.info("- Interpolated %d pseudo labels", len(pairs))
    return pairs


def scramble_hand_joints(pose3d, rng):
    """Permute the hand joint columns of a 3×29 pose (never the identity)."""
    pose3d = np.array(pose3d, dtype=np.float64)
    order = np.arange(NUM_HAND_JOINTS)
    while np.array_equal(order, np.arange(NUM_HAND_JOINTS)):
        order = rng.permutation(NUM_HAND_JOINTS)
    pose3d[:, :NUM_HAND_JOINTS] = pose3d[:, order]
    return pose3d


def transform_dataset(records, output_path):
    """Write the cylindrical hand vectors of all labeled records as CSV."""
    rows = []
    for record in records:
        if record.pose3d is None:
            continue
        try:
            h = cyl_encode(record.pose3d)
        except DegenerateBox as error:
            logger.warning("Skipping %s/%d: %s", record.sequence_id,
                           record.frame_idx, error)
            continue
        rows.append([record.sequence_id, record.frame_idx] + h.tolist())
    columns = ["sequence_id", "frame_idx"] + [
        f"h{index}" for index in range(4 * NUM_HAND_JOINTS)]
    table = pd.DataFrame(rows, columns=columns)
    table.to_csv(output_path, index=False)
    logger.info("- Wrote %d cylindrical pose vectors to %s", len(table),
                output_path)
    return table

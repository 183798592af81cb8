"""Procrustes-aligned MPJPE and PCK.

Each estimated frame is aligned to its reference by one similarity
transform over all 29 keypoints; group errors (hand, object, wrist) are
read off that single alignment.
"""

import logging

import numpy as np

from graspdict import InputError, NUM_HAND_JOINTS, NUM_KEYPOINTS
from graspdict.geometry import procrustes_align
from graspdict.numerics import ShapeMismatch

logger = logging.getLogger(__name__)

GROUPS = {
    "hand": np.arange(NUM_HAND_JOINTS),
    "object": np.arange(NUM_HAND_JOINTS, NUM_KEYPOINTS),
    "all": np.arange(NUM_KEYPOINTS),
    "wrist": np.array([0])}
PCK_THRESHOLDS = np.arange(0.0, 51.0, 1.0)


class EmptySet(InputError):
    pass


def _as_stack(poses):
    poses = np.asarray(poses, dtype=np.float64)
    return poses[None] if poses.ndim == 2 else poses


def aligned_errors(estimates, references):
    """(N, 29) Euclidean error of every keypoint after alignment."""
    estimates = _as_stack(estimates)
    references = _as_stack(references)
    if estimates.shape != references.shape:
        raise ShapeMismatch(
            f"{estimates.shape} estimates for {references.shape} references")
    if len(estimates) == 0:
        raise EmptySet("No frames to evaluate")
    return np.stack([
        np.linalg.norm(procrustes_align(estimate, reference) - reference,
                       axis=0)
        for estimate, reference in zip(estimates, references)])


def _group(group):
    try:
        return GROUPS[group]
    except KeyError:
        raise InputError(f"Unknown keypoint group '{group}'")


def mpjpe(estimates, references, group="all"):
    errors = aligned_errors(estimates, references)[:, _group(group)]
    return float(errors.mean(axis=1).mean())


def pck_curve(estimates, references, thresholds=PCK_THRESHOLDS, group="all"):
    """Fraction of aligned keypoint errors <= t for every threshold t."""
    errors = aligned_errors(estimates, references)[:, _group(group)].ravel()
    thresholds = np.asarray(thresholds, dtype=np.float64)
    return (errors[None, :] <= thresholds[:, None]).mean(axis=1)


def pck_auc(curve):
    """Area under a PCK curve on equally spaced thresholds, in [0, 1]."""
    return float(np.mean(curve))

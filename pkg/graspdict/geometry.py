"""Camera, object-oriented and cylindrical coordinate frames.

Pose layout
-----------

A 3D pose is a 3×29 array in millimeters (camera coordinates), a 2D pose a
2×29 array in pixels. Columns 0-20 are the hand joints (wrist, then thumb,
index, middle, ring and pinky with 4 joints each from proximal to tip),
columns 21-28 the box corners in canonical order.

Canonical corner order: corner ``i`` sits in the octant whose sign along
axis ``a`` is ``+`` iff bit ``a`` of ``i`` is set, i.e. corner 0 is
(-,-,-), corner 1 (+,-,-), corner 2 (-,+,-), corner 4 (-,-,+) and corner 7
(+,+,+). The object frame takes x'/y'/z' from the edges 0→1, 0→2 and 0→4.

A cylindrical hand pose ``h`` has length 4·21 and holds, joint by joint,
(rho, cos phi, sin phi, z').
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from graspdict import InputError, NUM_BOX_CORNERS, NUM_HAND_JOINTS
from graspdict import numerics as nx
from graspdict.numerics import ShapeMismatch

logger = logging.getLogger(__name__)

MIN_EDGE_LENGTH = 1e-6
MIN_CONDITION = 1e-6
AXIS_EPS = nx.CYLINDER_AXIS_EPS

# (8, 3) sign pattern of the canonical corner order
CORNER_SIGNS = np.array([[1.0 if (corner >> axis) & 1 else -1.0
                          for axis in range(3)]
                         for corner in range(NUM_BOX_CORNERS)])
EDGE_VERTICES = (1, 2, 4)


class DegenerateBox(InputError):
    pass


class DegeneratePose(InputError):
    pass


@dataclass(frozen=True)
class ObjectFrame:
    origin: np.ndarray
    axes: np.ndarray

    def to_camera(self, points):
        """Map (3, n) object-frame points back to camera coordinates."""
        return self.axes @ np.asarray(points, dtype=np.float64) + \
            self.origin[:, None]


def canonical_box(half_extents, rotation=None, translation=None):
    """Return the 3×8 corners of a box in canonical order."""
    corners = (CORNER_SIGNS * np.asarray(half_extents, dtype=np.float64)).T
    if rotation is not None:
        corners = np.asarray(rotation) @ corners
    if translation is not None:
        corners = corners + np.asarray(translation, dtype=np.float64)[:, None]
    return corners


def _orthonormal_axes(edges):
    """Gram-Schmidt over the three edge columns, then fix handedness."""
    x_axis = edges[:, 0] / np.linalg.norm(edges[:, 0])
    y_axis = edges[:, 1] - (edges[:, 1] @ x_axis) * x_axis
    y_axis /= np.linalg.norm(y_axis)
    z_axis = edges[:, 2] - (edges[:, 2] @ x_axis) * x_axis - (
        edges[:, 2] @ y_axis) * y_axis
    z_axis /= np.linalg.norm(z_axis)
    axes = np.column_stack([x_axis, y_axis, z_axis])
    if np.linalg.det(axes) < 0:
        axes[:, 2] = -axes[:, 2]
    return axes


def object_frame_from_corners(corners):
    corners = np.asarray(corners, dtype=np.float64)
    if corners.shape != (3, NUM_BOX_CORNERS):
        raise ShapeMismatch(f"Expected 3x8 box corners, got {corners.shape}")
    edges = corners[:, list(EDGE_VERTICES)] - corners[:, [0]]
    lengths = np.linalg.norm(edges, axis=0)
    if np.any(lengths < MIN_EDGE_LENGTH):
        raise DegenerateBox(
            f"Box edge shorter than {MIN_EDGE_LENGTH} mm: {lengths}")
    singular_values = linalg.svd(edges / lengths, compute_uv=False)
    if singular_values[-1] / singular_values[0] < MIN_CONDITION:
        raise DegenerateBox("Box edges are not linearly independent")
    return ObjectFrame(origin=corners.mean(axis=1),
                       axes=_orthonormal_axes(edges))


def to_object_frame(p, frame):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 1:
        return frame.axes.T @ (p - frame.origin)
    return frame.axes.T @ (p - frame.origin[:, None])


def _check_pose(y, rows):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] != rows or \
            y.shape[1] != NUM_HAND_JOINTS + NUM_BOX_CORNERS:
        raise ShapeMismatch(
            f"Expected a {rows}x{NUM_HAND_JOINTS + NUM_BOX_CORNERS} pose, "
            f"got {y.shape}")
    return y


def cyl_encode(y, frame=None):
    """Object-oriented cylindrical vector h of the hand joints of ``y``.

    ``frame`` defaults to the frame of y's own box corners.
    """
    y = _check_pose(y, 3)
    if frame is None:
        frame = object_frame_from_corners(y[:, NUM_HAND_JOINTS:])
    local = to_object_frame(y[:, :NUM_HAND_JOINTS], frame)
    return nx.cylindrical(local.T).data.reshape(-1)


def cyl_decode(h, frame):
    """Inverse of ``cyl_encode`` on the hand joints, in camera coordinates."""
    h = np.asarray(h, dtype=np.float64)
    if h.size % 4 != 0:
        raise ShapeMismatch(f"Cylindrical vector length {h.size} is not 4m")
    joints = h.reshape(-1, 4)
    rho, cos, sin, z = joints.T
    norm = np.hypot(cos, sin)
    on_axis = norm <= AXIS_EPS
    safe = np.where(on_axis, 1.0, norm)
    cos = np.where(on_axis, 1.0, cos / safe)
    sin = np.where(on_axis, 0.0, sin / safe)
    local = np.vstack([rho * cos, rho * sin, z])
    return frame.to_camera(local)


def cyl_encode_batch(poses):
    """Encode a (B, 3, 29) stack; returns (B, 4·21)."""
    poses = np.asarray(poses, dtype=np.float64)
    return np.stack([cyl_encode(pose) for pose in poses]) if len(poses) else \
        np.zeros((0, 4 * NUM_HAND_JOINTS))


def _normalize(v):
    return v / nx.sqrt(nx.tsum(nx.square(v), axis=1, keepdims=True) + 1e-12)


def _dot(a, b):
    return nx.tsum(a * b, axis=1, keepdims=True)


def cyl_encode_tensor(poses, frame_gradient=True):
    """Differentiable ``cyl_encode`` of a (B, 3, 29) Tensor.

    The object frame is rebuilt from the (estimated) corners with the same
    Gram-Schmidt order as ``object_frame_from_corners``. With
    ``frame_gradient=False`` the frame is treated as a constant.
    """
    poses = nx.as_tensor(poses)
    corners = poses[:, :, NUM_HAND_JOINTS:]
    hand = poses[:, :, :NUM_HAND_JOINTS]
    origin = nx.mean(corners, axis=2, keepdims=True)
    edges = [corners[:, :, vertex] - corners[:, :, 0]
             for vertex in EDGE_VERTICES]
    x_axis = _normalize(edges[0])
    y_axis = _normalize(edges[1] - _dot(edges[1], x_axis) * x_axis)
    z_axis = _normalize(edges[2] - _dot(edges[2], x_axis) * x_axis
                        - _dot(edges[2], y_axis) * y_axis)
    # Handedness flip is piecewise constant, so it enters as a constant.
    determinant = np.linalg.det(np.stack(
        [x_axis.data, y_axis.data, z_axis.data], axis=2))
    z_axis = z_axis * np.where(determinant < 0, -1.0, 1.0)[:, None]
    if not frame_gradient:
        origin, x_axis, y_axis, z_axis = (
            nx.detach(t) for t in (origin, x_axis, y_axis, z_axis))
    relative = hand - origin
    local = nx.stack([nx.tsum(relative * axis.reshape(-1, 3, 1), axis=1)
                      for axis in (x_axis, y_axis, z_axis)], axis=-1)
    cylinder = nx.cylindrical(local)
    return cylinder.reshape(poses.shape[0], 4 * NUM_HAND_JOINTS)


def procrustes_align(estimate, reference):
    """Similarity transform of ``estimate`` closest to ``reference``.

    Rotation, translation and uniform scale are solved jointly over all
    columns (orthogonal Procrustes on centered, scale-normalized points).
    """
    estimate = np.asarray(estimate, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if estimate.shape != reference.shape:
        raise ShapeMismatch(
            f"Cannot align {estimate.shape} to {reference.shape}")
    source = estimate.T
    target = reference.T
    source_mean = source.mean(axis=0)
    target_mean = target.mean(axis=0)
    source_centered = source - source_mean
    target_centered = target - target_mean
    source_norm = np.sqrt((source_centered ** 2).sum())
    if source_norm < 1e-12:
        raise DegeneratePose("All points of the estimate coincide")
    target_norm = np.sqrt((target_centered ** 2).sum())
    if target_norm < 1e-12:
        return np.repeat(target_mean[:, None], reference.shape[1], axis=1)
    source_centered = source_centered / source_norm
    target_centered = target_centered / target_norm
    u, s, vt = linalg.svd(target_centered.T @ source_centered)
    v = vt.T
    rotation = v @ u.T
    # No reflections.
    if np.linalg.det(rotation) < 0:
        v[:, -1] *= -1
        s[-1] *= -1
        rotation = v @ u.T
    scale = s.sum() * target_norm / source_norm
    translation = target_mean - scale * source_mean @ rotation
    aligned = scale * source @ rotation + translation
    return aligned.T

"""Gaze geometry: angle conversions, adaptive head-pose thresholding,
gaze origin, and gaze-ray / camera-plane intersection.

Angle convention (shared by every module that talks about gaze or head
orientation): pitch is positive looking up, yaw is positive looking to
the left from the camera's point of view, and a gaze straight into the
camera is (0, 0).  The matching unit vector is

    v = (-cos(pitch) * sin(yaw), -sin(pitch), -cos(pitch) * cos(yaw))

so (0, 0) maps to (0, 0, -1) in camera coordinates (x right, y down,
z away from the camera).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import GeometryError, NoIntersection

DEFAULT_THRESHOLD_RAD = math.radians(40.0)


@dataclass(frozen=True)
class GazeAngles:
    """Gaze (or head facing) direction as pitch/yaw in radians."""

    pitch: float
    yaw: float

    def as_tuple(self):
        return (self.pitch, self.yaw)


@dataclass(frozen=True)
class GazePoint2D:
    """Intersection of a gaze ray with the camera z=0 plane, in mm."""

    x: float
    y: float

    def as_array(self):
        return np.array([self.x, self.y], dtype=float)


class GazeSource(Enum):
    GAZE = "gaze"
    HEAD_POSE_PROXY = "head_pose_proxy"


def angles_to_vector(g: GazeAngles) -> np.ndarray:
    """Unit 3-vector for pitch/yaw angles (see module docstring)."""
    if not (math.isfinite(g.pitch) and math.isfinite(g.yaw)):
        raise GeometryError("gaze angles must be finite")
    cp = math.cos(g.pitch)
    return np.array(
        [-cp * math.sin(g.yaw), -math.sin(g.pitch), -cp * math.cos(g.yaw)]
    )


def vector_to_angles(v) -> GazeAngles:
    """Inverse of :func:`angles_to_vector` for any nonzero 3-vector."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0 or not np.all(np.isfinite(v)):
        raise GeometryError("cannot convert zero or non-finite vector to angles")
    v = v / n
    pitch = math.asin(np.clip(-v[1], -1.0, 1.0))
    # 0.0 - x normalizes negative zeros so a straight-up gaze gets yaw 0
    yaw = math.atan2(0.0 - v[0], 0.0 - v[2])
    return GazeAngles(pitch, yaw)


def apply_threshold(
    gaze_n: GazeAngles | None,
    headpose_n: GazeAngles,
    theta: float = DEFAULT_THRESHOLD_RAD,
    phi: float = DEFAULT_THRESHOLD_RAD,
) -> tuple[GazeAngles, GazeSource]:
    """Pick the effective gaze: the estimate, or the head facing as proxy.

    The head facing replaces the gaze estimate whenever the estimate is
    missing or the normalized head-pose pitch/yaw leaves [-theta, theta] /
    [-phi, phi].  The boundary is inclusive: at exactly the threshold the
    gaze estimate is kept.

    Args:
        gaze_n: gaze estimate in normalized space, or None.
        headpose_n: head facing angles in normalized space (must exist).
        theta: pitch threshold in radians (default 40 deg).
        phi: yaw threshold in radians (default 40 deg).

    Returns:
        (effective angles, source tag)
    """
    if gaze_n is None or abs(headpose_n.pitch) > theta or abs(headpose_n.yaw) > phi:
        return headpose_n, GazeSource.HEAD_POSE_PROXY
    return gaze_n, GazeSource.GAZE


def gaze_origin(pose, model, index_map=None) -> np.ndarray:
    """Camera-space gaze origin: the midpoint of the two eye midpoints.

    Args:
        pose: HeadPose (model -> camera rigid transform).
        model: FaceModel3D supplying the 68 model points in mm.
        index_map: LandmarkIndexMap naming the eye-corner landmarks;
            defaults to the standard 68-point corners.
    """
    from .normalize import DEFAULT_INDEX_MAP  # avoid import cycle at module load

    imap = index_map if index_map is not None else DEFAULT_INDEX_MAP
    pts = model.points
    right_mid = pts[list(imap.right_eye)].mean(axis=0)
    left_mid = pts[list(imap.left_eye)].mean(axis=0)
    mid = 0.5 * (right_mid + left_mid)
    return pose.rotation @ mid + pose.translation


def intersect_plane(origin, direction) -> GazePoint2D:
    """Intersect the ray origin + s*direction (s > 0) with the z=0 plane.

    Raises NoIntersection when the ray is parallel to the plane or points
    away from it.
    """
    origin = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    if d[2] == 0.0:
        raise NoIntersection("gaze ray parallel to the camera plane")
    s = -origin[2] / d[2]
    if s <= 0.0:
        raise NoIntersection("gaze ray points away from the camera plane")
    p = origin + s * d
    return GazePoint2D(float(p[0]), float(p[1]))

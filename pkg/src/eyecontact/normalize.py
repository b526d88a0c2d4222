"""Camera-space normalization: head coordinate frame, rotation + scaling to
a fixed virtual camera looking straight at the face center, perspective
image warping, and angle conversion into the normalized space.

The head frame follows the eye/mouth triangle: x along the line between
the two eye midpoints (toward the subject's left), y from the eyes toward
the mouth midpoint within the triangle plane, z perpendicular and pointing
toward the back of the head.  The normalized camera cancels head roll and
puts the face center on its optical axis at a fixed distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError
from .gaze import GazeAngles, vector_to_angles
from .headpose import CameraIntrinsics, FaceModel3D, HeadPose


@dataclass(frozen=True)
class LandmarkIndexMap:
    """Landmark indices of the stable facial anchor points (68-point scheme).

    right/left are the subject's right and left."""

    right_eye: tuple[int, int] = (36, 39)   # outer, inner corner
    left_eye: tuple[int, int] = (42, 45)    # inner, outer corner
    mouth: tuple[int, int] = (48, 54)       # right, left corner


DEFAULT_INDEX_MAP = LandmarkIndexMap()


@dataclass(frozen=True)
class HeadFrame:
    origin: np.ndarray    # mm, camera coords
    x_axis: np.ndarray
    y_axis: np.ndarray
    z_axis: np.ndarray

    @property
    def facing(self) -> np.ndarray:
        """Unit vector out of the face (the negated z axis, which points
        toward the back of the head)."""
        return -self.z_axis


@dataclass(frozen=True)
class NormParams:
    focal_norm: float = 960.0       # px
    distance_norm: float = 300.0    # mm
    out_size: tuple[int, int] = (448, 448)

    def __post_init__(self):
        if self.focal_norm <= 0 or self.distance_norm <= 0:
            raise GeometryError("normalization parameters must be positive")
        if self.out_size[0] < 1 or self.out_size[1] < 1:
            raise GeometryError("output size must be positive")

    @property
    def intrinsics(self) -> CameraIntrinsics:
        w, h = self.out_size
        return CameraIntrinsics(
            fx=self.focal_norm, fy=self.focal_norm, cx=w / 2.0 - 0.5, cy=h / 2.0 - 0.5
        )


@dataclass
class NormalizationResult:
    warp: np.ndarray              # 3x3: real image px -> normalized image px
    rot: np.ndarray               # 3x3: camera -> normalized camera
    scale: float                  # distance_norm / actual face distance
    headpose_n: GazeAngles        # head facing in normalized space
    gaze_n: GazeAngles | None     # gaze in normalized space, when supplied


def head_frame(
    pose: HeadPose, model: FaceModel3D, index_map: LandmarkIndexMap = DEFAULT_INDEX_MAP
) -> HeadFrame:
    """Head coordinate frame from the eye/mouth triangle under a pose.

    The origin is the centroid of the two eye midpoints and the mouth
    midpoint in camera space.  Raises GeometryError when the three
    midpoints are collinear.
    """
    pts = model.points @ pose.rotation.T + pose.translation
    right_mid = pts[list(index_map.right_eye)].mean(axis=0)
    left_mid = pts[list(index_map.left_eye)].mean(axis=0)
    mouth_mid = pts[list(index_map.mouth)].mean(axis=0)

    origin = (right_mid + left_mid + mouth_mid) / 3.0
    x = left_mid - right_mid
    nx = np.linalg.norm(x)
    if nx < 1e-12:
        raise GeometryError("eye midpoints coincide")
    x = x / nx

    to_mouth = mouth_mid - 0.5 * (right_mid + left_mid)
    y = to_mouth - (to_mouth @ x) * x
    ny = np.linalg.norm(y)
    if ny < 1e-9 * max(1.0, np.linalg.norm(to_mouth)):
        raise GeometryError("eye and mouth midpoints are collinear")
    y = y / ny
    z = np.cross(x, y)
    return HeadFrame(origin=origin, x_axis=x, y_axis=y, z_axis=z / np.linalg.norm(z))


def normalization_transform(
    frame: HeadFrame,
    k_real: CameraIntrinsics,
    params: NormParams = NormParams(),
    gaze_dir=None,
) -> NormalizationResult:
    """Rotation, scaling, and image warp into the normalized camera.

    The normalized camera looks straight at the face center (rot maps it
    onto the optical axis) with head roll cancelled, at a fixed distance
    encoded by ``scale``.  ``gaze_dir``, when given, is a camera-space
    gaze vector to express in the normalized space as well.
    """
    c = frame.origin
    d = float(np.linalg.norm(c))
    if d < 1e-9:
        raise GeometryError("face center at the camera origin")
    if c[2] <= 0:
        raise GeometryError("face center must be in front of the camera")

    z_r = c / d
    y_raw = np.cross(z_r, frame.x_axis)
    n = np.linalg.norm(y_raw)
    if n < 1e-12:
        raise GeometryError("head x-axis parallel to the view direction")
    y_r = y_raw / n
    x_r = np.cross(y_r, z_r)
    rot = np.vstack([x_r, y_r, z_r])

    scale = params.distance_norm / d
    warp = (
        params.intrinsics.matrix
        @ np.diag([1.0, 1.0, scale])
        @ rot
        @ np.linalg.inv(k_real.matrix)
    )
    headpose_n = vector_to_angles(rot @ frame.facing)
    gaze_n = vector_to_angles(rot @ np.asarray(gaze_dir)) if gaze_dir is not None else None
    return NormalizationResult(
        warp=warp, rot=rot, scale=scale, headpose_n=headpose_n, gaze_n=gaze_n
    )


def rotate_to_normalized(rot, v) -> GazeAngles:
    """Angles of a unit vector after rotation into the normalized camera."""
    return vector_to_angles(np.asarray(rot) @ np.asarray(v, dtype=float))


def warp_image(image, warp, out_size) -> np.ndarray:
    """Warp an image by a homography with inverse-mapped bilinear sampling.

    Args:
        image: (H, W) or (H, W, C) uint8 buffer.
        warp: 3x3 source-pixel -> output-pixel homography (invertible).
        out_size: (width, height) of the output.

    Source samples falling outside the image are black.
    """
    img = np.asarray(image)
    if img.ndim == 2:
        img = img[:, :, None]
        squeeze = True
    else:
        squeeze = False
    h, w = img.shape[:2]
    out_w, out_h = out_size

    try:
        inv = np.linalg.inv(np.asarray(warp, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise GeometryError("singular warp matrix") from exc

    xs, ys = np.meshgrid(np.arange(out_w, dtype=float), np.arange(out_h, dtype=float))
    denom = inv[2, 0] * xs + inv[2, 1] * ys + inv[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = (inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]) / denom
        sy = (inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]) / denom

    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0

    valid = np.isfinite(sx) & np.isfinite(sy)
    valid &= (x0 >= -1) & (x0 <= w - 1) & (y0 >= -1) & (y0 <= h - 1)

    out = np.zeros((out_h, out_w, img.shape[2]), dtype=float)
    pix = img.astype(float)

    def sample(xi, yi):
        ok = valid & (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        res = np.zeros((out_h, out_w, img.shape[2]))
        res[ok] = pix[yi[ok].astype(int), xi[ok].astype(int)]
        return res

    wx0, wx1 = (1 - fx)[..., None], fx[..., None]
    wy0, wy1 = (1 - fy)[..., None], fy[..., None]
    out = (
        sample(x0, y0) * wx0 * wy0
        + sample(x0 + 1, y0) * wx1 * wy0
        + sample(x0, y0 + 1) * wx0 * wy1
        + sample(x0 + 1, y0 + 1) * wx1 * wy1
    )
    out = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out[:, :, 0] if squeeze else out


def read_png(path) -> np.ndarray:
    """Load a PNG as a (H, W) or (H, W, 3) uint8 array."""
    from PIL import Image

    img = Image.open(path)
    if img.mode not in ("L", "RGB"):
        img = img.convert("RGB")
    return np.asarray(img)


def write_png(path, image) -> None:
    """Write a (H, W) or (H, W, 3) uint8 array as PNG."""
    from PIL import Image

    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path, format="PNG")

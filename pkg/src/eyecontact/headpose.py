"""3D head pose from 68 2D landmarks.

EPnP (control-point formulation) supplies the initial pose, a damped
Levenberg-Marquardt pass on SE(3) polishes it against reprojection error,
and a constant-velocity Kalman filter smooths the per-frame estimates
within a session.

Coordinate frames: model points live in the head frame of the generic
face model (x toward the subject's left, y down, z toward the back of the
head); poses map model -> camera (x right, y down, z away from camera);
all translations in mm, image coordinates in px.
"""

from __future__ import annotations

import importlib.resources
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import GeometryError, PipelineError

# control-point pairs used by the EPnP distance constraints
_CTRL_PAIRS = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics, zero distortion."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


def default_intrinsics(width: int, height: int) -> CameraIntrinsics:
    """Approximate intrinsics for an uncalibrated camera: focal length equal
    to the image width, principal point at the image center."""
    if width < 1 or height < 1:
        raise GeometryError("image dimensions must be >= 1")
    return CameraIntrinsics(
        fx=float(width), fy=float(width), cx=(width - 1) / 2.0, cy=(height - 1) / 2.0
    )


@dataclass(frozen=True)
class FaceModel3D:
    """68 model points in mm, head coordinate frame."""

    points: np.ndarray  # (68, 3)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.shape != (68, 3):
            raise GeometryError(f"face model needs 68 points, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("face model points must be finite")
        centered = pts - pts.mean(axis=0)
        if np.linalg.matrix_rank(centered, tol=1e-8) < 2:
            raise GeometryError("face model points are rank-degenerate")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_file(cls, path) -> "FaceModel3D":
        """Load a model from a plain-text file: 68 lines of 'x y z' in mm."""
        pts = np.loadtxt(path, dtype=float)
        return cls(points=pts)

    @classmethod
    def default(cls) -> "FaceModel3D":
        """The canonical generic model shipped with the package."""
        ref = importlib.resources.files("eyecontact.data").joinpath("face_model_68.txt")
        with importlib.resources.as_file(ref) as path:
            return cls.from_file(path)


@dataclass
class HeadPose:
    """Rigid transform model -> camera plus the fit quality."""

    rotation: np.ndarray        # (3, 3) orthonormal
    translation: np.ndarray     # (3,) mm
    reprojection_rmse: float    # px, root mean square point distance

    def validate(self, require_front=True):
        r = self.rotation
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-6:
            raise GeometryError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise GeometryError("rotation determinant is not +1")
        if require_front and self.translation[2] <= 0:
            raise GeometryError("head must be in front of the camera (t_z > 0)")


def project_points(points, rotation, translation, k: CameraIntrinsics) -> np.ndarray:
    """Project (N, 3) model points through a pose onto the image, in px."""
    cam = np.asarray(points) @ np.asarray(rotation).T + np.asarray(translation)
    z = cam[:, 2]
    return np.column_stack((k.fx * cam[:, 0] / z + k.cx, k.fy * cam[:, 1] / z + k.cy))


def reprojection_rmse(model, pose: HeadPose, landmarks, k) -> float:
    proj = project_points(model.points, pose.rotation, pose.translation, k)
    return float(np.sqrt(np.mean(np.sum((proj - landmarks) ** 2, axis=1))))


def _orthonormalize(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] = -u[:, -1]
        out = u @ vt
    return out


# ---------------------------------------------------------------------------
# EPnP
# ---------------------------------------------------------------------------

def _control_points(points: np.ndarray) -> np.ndarray:
    """Centroid plus the three principal axes of the cloud, scaled by the
    per-axis standard deviation."""
    c0 = points.mean(axis=0)
    centered = points - c0
    cov = centered.T @ centered / points.shape[0]
    evals, evecs = np.linalg.eigh(cov)  # ascending
    if evals[0] < evals[2] * 1e-10 or evals[2] <= 0.0:
        raise GeometryError("degenerate control-point system (near-planar model)")
    ctrl = [c0]
    for i in (2, 1, 0):
        ctrl.append(c0 + math.sqrt(evals[i]) * evecs[:, i])
    return np.array(ctrl)


def _barycentric(points, ctrl) -> np.ndarray:
    basis = np.vstack([ctrl.T, np.ones(4)])           # 4x4
    hom = np.hstack([points, np.ones((len(points), 1))])
    return np.linalg.solve(basis, hom.T).T            # (N, 4)


def _betas_gauss_newton(L, rho, betas, iterations=5):
    b = betas.copy()
    for _ in range(iterations):
        b1, b2, b3, b4 = b
        prod = np.array(
            [b1 * b1, b1 * b2, b2 * b2, b1 * b3, b2 * b3,
             b3 * b3, b1 * b4, b2 * b4, b3 * b4, b4 * b4]
        )
        resid = rho - L @ prod
        jac = np.column_stack(
            [
                2 * L[:, 0] * b1 + L[:, 1] * b2 + L[:, 3] * b3 + L[:, 6] * b4,
                L[:, 1] * b1 + 2 * L[:, 2] * b2 + L[:, 4] * b3 + L[:, 7] * b4,
                L[:, 3] * b1 + L[:, 4] * b2 + 2 * L[:, 5] * b3 + L[:, 8] * b4,
                L[:, 6] * b1 + L[:, 7] * b2 + L[:, 8] * b3 + 2 * L[:, 9] * b4,
            ]
        )
        step, *_ = np.linalg.lstsq(jac, resid, rcond=None)
        b = b + step
    return b


def _betas_seeds(L, rho):
    """The three closed-form linearizations used to seed Gauss-Newton."""
    seeds = []

    x, *_ = np.linalg.lstsq(L[:, [0, 1, 3, 6]], rho, rcond=None)
    if x[0] < 0:
        seeds.append(np.array([math.sqrt(-x[0]), *(-x[1:] / math.sqrt(-x[0]))]))
    else:
        seeds.append(np.array([math.sqrt(x[0]), *(x[1:] / math.sqrt(x[0]))]))

    x, *_ = np.linalg.lstsq(L[:, [0, 1, 2]], rho, rcond=None)
    if x[0] < 0:
        b1, b2 = math.sqrt(-x[0]), (math.sqrt(-x[2]) if x[2] < 0 else 0.0)
    else:
        b1, b2 = math.sqrt(x[0]), (math.sqrt(x[2]) if x[2] > 0 else 0.0)
    if x[1] < 0:
        b1 = -b1
    seeds.append(np.array([b1, b2, 0.0, 0.0]))

    x, *_ = np.linalg.lstsq(L[:, [0, 1, 2, 3, 4]], rho, rcond=None)
    if x[0] < 0:
        b1, b2 = math.sqrt(-x[0]), (math.sqrt(-x[2]) if x[2] < 0 else 0.0)
    else:
        b1, b2 = math.sqrt(x[0]), (math.sqrt(x[2]) if x[2] > 0 else 0.0)
    if x[1] < 0:
        b1 = -b1
    seeds.append(np.array([b1, b2, x[3] / b1 if b1 != 0 else 0.0, 0.0]))

    return seeds


def _pose_from_point_cloud(world, cam):
    """Least-squares rigid transform world -> cam (Horn / Kabsch)."""
    cw = world.mean(axis=0)
    cc = cam.mean(axis=0)
    h = (world - cw).T @ (cam - cc)
    u, _, vt = np.linalg.svd(h)
    r = vt.T @ u.T
    if np.linalg.det(r) < 0:
        vt[-1] = -vt[-1]
        r = vt.T @ u.T
    t = cc - r @ cw
    return r, t


def solve_epnp(model: FaceModel3D, landmarks, k: CameraIntrinsics) -> HeadPose:
    """Estimate the head pose from 2D landmarks with the EPnP algorithm.

    Args:
        model: the 68-point 3D face model.
        landmarks: (N, 2) pixel coordinates matching the model points
            row-for-row, N >= 4.
        k: camera intrinsics.

    Raises:
        GeometryError: fewer than 4 points, non-finite input, or a
            numerically degenerate control-point system.
    """
    pts2d = np.asarray(landmarks, dtype=float)
    pts3d = np.asarray(model.points, dtype=float)
    if pts2d.ndim != 2 or pts2d.shape[1] != 2:
        raise GeometryError("landmarks must be an (N, 2) array")
    if pts2d.shape[0] != pts3d.shape[0]:
        raise GeometryError("landmark count does not match the model")
    if pts2d.shape[0] < 4:
        raise GeometryError("EPnP needs at least 4 correspondences")
    if not np.all(np.isfinite(pts2d)):
        raise GeometryError("landmarks must be finite")

    ctrl_w = _control_points(pts3d)
    alphas = _barycentric(pts3d, ctrl_w)

    n = pts2d.shape[0]
    m = np.zeros((2 * n, 12))
    u = pts2d[:, 0]
    v = pts2d[:, 1]
    for j in range(4):
        a = alphas[:, j]
        m[0::2, 3 * j + 0] = a * k.fx
        m[0::2, 3 * j + 2] = a * (k.cx - u)
        m[1::2, 3 * j + 1] = a * k.fy
        m[1::2, 3 * j + 2] = a * (k.cy - v)

    _, evecs = np.linalg.eigh(m.T @ m)
    kernel = evecs[:, :4]                      # columns: 4 smallest eigenvectors
    vk = kernel.T.reshape(4, 4, 3)             # (kernel vec, ctrl point, xyz)

    ii = [p[0] for p in _CTRL_PAIRS]
    jj = [p[1] for p in _CTRL_PAIRS]
    dv = vk[:, ii, :] - vk[:, jj, :]           # (4, 6, 3)
    rho = np.sum((ctrl_w[ii] - ctrl_w[jj]) ** 2, axis=1)

    dot = np.einsum("apx,bpx->pab", dv, dv)    # (6, 4, 4)
    L = np.column_stack(
        [
            dot[:, 0, 0], 2 * dot[:, 0, 1], dot[:, 1, 1], 2 * dot[:, 0, 2],
            2 * dot[:, 1, 2], dot[:, 2, 2], 2 * dot[:, 0, 3], 2 * dot[:, 1, 3],
            2 * dot[:, 2, 3], dot[:, 3, 3],
        ]
    )

    best = None
    for seed in _betas_seeds(L, rho):
        betas = _betas_gauss_newton(L, rho, seed)
        ctrl_c = (kernel @ betas).reshape(4, 3)
        cam = alphas @ ctrl_c
        if cam[:, 2].mean() < 0:               # mirrored solution: flip depth
            cam = -cam
        r, t = _pose_from_point_cloud(pts3d, cam)
        pose = HeadPose(rotation=r, translation=t, reprojection_rmse=0.0)
        pose.reprojection_rmse = float(
            np.sqrt(np.mean(np.sum((project_points(pts3d, r, t, k) - pts2d) ** 2, axis=1)))
        )
        if best is None or pose.reprojection_rmse < best.reprojection_rmse:
            best = pose

    if best is None or not np.isfinite(best.reprojection_rmse):
        raise GeometryError("EPnP failed to produce a finite solution")
    if best.translation[2] <= 0:
        raise GeometryError("EPnP solution places the head behind the camera")
    return best


# ---------------------------------------------------------------------------
# Levenberg-Marquardt refinement
# ---------------------------------------------------------------------------

def _residual_and_jacobian(r, t, pts3d, pts2d, k):
    cam = pts3d @ r.T + t
    x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
    proj = np.column_stack((k.fx * x / z + k.cx, k.fy * y / z + k.cy))
    resid = (proj - pts2d).ravel()

    # d(projection)/d(camera point)
    zero = np.zeros_like(z)
    dpdc = np.stack(
        [
            np.stack([k.fx / z, zero, -k.fx * x / z**2], axis=1),
            np.stack([zero, k.fy / z, -k.fy * y / z**2], axis=1),
        ],
        axis=1,
    )                                                     # (N, 2, 3)
    # right-multiplicative update: cam = R exp([dw]x) X + t + dt
    # => d(cam)/d(dw) = -R [X]x, d(cam)/d(dt) = I
    px, py, pz = pts3d[:, 0], pts3d[:, 1], pts3d[:, 2]
    skew = np.zeros((len(pts3d), 3, 3))
    skew[:, 0, 1], skew[:, 0, 2] = -pz, py
    skew[:, 1, 0], skew[:, 1, 2] = pz, -px
    skew[:, 2, 0], skew[:, 2, 1] = -py, px
    dcdw = -np.einsum("ab,nbc->nac", r, skew)             # (N, 3, 3)

    jac = np.empty((len(pts3d), 2, 6))
    jac[:, :, :3] = np.einsum("nab,nbc->nac", dpdc, dcdw)
    jac[:, :, 3:] = dpdc
    return resid, jac.reshape(-1, 6)


def refine_lm(
    initial: HeadPose,
    model: FaceModel3D,
    landmarks,
    k: CameraIntrinsics,
    max_iters: int = 50,
    tol: float = 1e-10,
    lambda0: float = 1e-3,
) -> HeadPose:
    """Minimize reprojection error with damped Levenberg-Marquardt on SE(3).

    Only improving steps are accepted (damping x10 on reject, /10 on
    accept), so the returned RMSE never exceeds the initial one.  Stops on
    step norm < tol, the iteration cap, or damping overflow.
    """
    pts2d = np.asarray(landmarks, dtype=float)
    pts3d = model.points
    r = initial.rotation.copy()
    t = initial.translation.astype(float).copy()

    resid, jac = _residual_and_jacobian(r, t, pts3d, pts2d, k)
    if not np.all(np.isfinite(resid)):
        raise GeometryError("non-finite reprojection residuals")
    sse = resid @ resid
    best = (r.copy(), t.copy(), sse)

    lam = lambda0
    for _ in range(max_iters):
        jtj = jac.T @ jac
        jtr = jac.T @ resid
        try:
            step = np.linalg.solve(jtj + lam * np.eye(6), -jtr)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        r_new = _orthonormalize(r @ Rotation.from_rotvec(step[:3]).as_matrix())
        t_new = t + step[3:]
        resid_new, jac_new = _residual_and_jacobian(r_new, t_new, pts3d, pts2d, k)
        sse_new = resid_new @ resid_new
        if np.isfinite(sse_new) and sse_new < sse:
            r, t, sse = r_new, t_new, sse_new
            resid, jac = resid_new, jac_new
            if sse < best[2]:
                best = (r.copy(), t.copy(), sse)
            lam = max(lam / 10.0, 1e-15)
            if np.linalg.norm(step) < tol:
                break
        else:
            lam *= 10.0
            if lam > 1e12:
                break

    r, t, sse = best
    rmse = math.sqrt(sse / len(pts3d))
    return HeadPose(rotation=r, translation=t, reprojection_rmse=rmse)


# ---------------------------------------------------------------------------
# Kalman smoothing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KalmanConfig:
    """Constant-velocity filter noise levels (per second / per second^2)."""

    process_noise_rot: float = 0.02    # rad / s^2
    process_noise_trans: float = 5.0   # mm / s^2
    meas_noise_rot: float = 0.05       # rad
    meas_noise_trans: float = 10.0     # mm
    prior_vel_rot: float = 0.5         # rad / s
    prior_vel_trans: float = 50.0      # mm / s


@dataclass
class KalmanState:
    """12-dim state: rotation vector, translation, and their velocities."""

    x: np.ndarray               # (12,)
    covariance: np.ndarray      # (12, 12) symmetric PSD
    timestamp: float


def _pose_to_measurement(pose: HeadPose) -> np.ndarray:
    rvec = Rotation.from_matrix(pose.rotation).as_rotvec()
    return np.concatenate([rvec, pose.translation])


def _nearest_rotvec(rvec: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Rotation-vector representative of rvec closest to a reference (the
    angle is only defined up to 2*pi turns around the same axis)."""
    theta = np.linalg.norm(rvec)
    if theta < 1e-12:
        return rvec
    axis = rvec / theta
    candidates = [rvec, axis * (theta - 2 * math.pi), axis * (theta + 2 * math.pi)]
    return min(candidates, key=lambda c: np.linalg.norm(c - reference))


def kalman_step(
    state: KalmanState | None,
    measurement: HeadPose,
    t: float,
    config: KalmanConfig = KalmanConfig(),
) -> tuple[KalmanState, HeadPose]:
    """One predict/update cycle; a None state initializes from the measurement.

    Returns the new state and the smoothed pose.  Raises PipelineError when
    t does not advance past the state's timestamp.
    """
    z = _pose_to_measurement(measurement)

    if state is None:
        p0 = np.diag(
            [config.meas_noise_rot**2] * 3
            + [config.meas_noise_trans**2] * 3
            + [config.prior_vel_rot**2] * 3
            + [config.prior_vel_trans**2] * 3
        )
        new = KalmanState(x=np.concatenate([z, np.zeros(6)]), covariance=p0, timestamp=t)
        return new, measurement

    dt = t - state.timestamp
    if dt <= 0:
        raise PipelineError(f"non-increasing timestamp: {t} after {state.timestamp}")

    f = np.eye(12)
    f[:6, 6:] = dt * np.eye(6)
    sigma2 = np.array([config.process_noise_rot**2] * 3 + [config.process_noise_trans**2] * 3)
    q = np.zeros((12, 12))
    q[:6, :6] = np.diag(sigma2 * dt**4 / 4.0)
    q[:6, 6:] = q[6:, :6] = np.diag(sigma2 * dt**3 / 2.0)
    q[6:, 6:] = np.diag(sigma2 * dt**2)

    x_pred = f @ state.x
    p_pred = f @ state.covariance @ f.T + q

    z = np.concatenate([_nearest_rotvec(z[:3], x_pred[:3]), z[3:]])
    h = np.hstack([np.eye(6), np.zeros((6, 6))])
    r_meas = np.diag([config.meas_noise_rot**2] * 3 + [config.meas_noise_trans**2] * 3)

    innov = z - h @ x_pred
    s = h @ p_pred @ h.T + r_meas
    gain = p_pred @ h.T @ np.linalg.inv(s)
    x_new = x_pred + gain @ innov
    ikh = np.eye(12) - gain @ h
    p_new = ikh @ p_pred @ ikh.T + gain @ r_meas @ gain.T   # Joseph form keeps PSD
    p_new = 0.5 * (p_new + p_new.T)

    new_state = KalmanState(x=x_new, covariance=p_new, timestamp=t)
    smoothed = HeadPose(
        rotation=_orthonormalize(Rotation.from_rotvec(x_new[:3]).as_matrix()),
        translation=x_new[3:6].copy(),
        reprojection_rmse=measurement.reprojection_rmse,
    )
    return new_state, smoothed

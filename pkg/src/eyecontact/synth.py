"""Synthetic session generator: the ground-truth oracle for pipeline tests.

Sessions are built from a hidden truth: smooth head-pose trajectories
(anchor poses with linear interpolation, so the constant-velocity Kalman
assumption roughly holds), a device/environment focus Markov chain, gaze
targets drawn around the device (near the camera origin) or environment
(off-origin) centers in the camera plane, and class-conditional Gaussian
feature vectors whose separation controls task difficulty.  Landmarks are
real projections of the face model under the drawn pose plus pixel noise,
so the head-pose stages run on honest input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import PipelineError
from .gaze import vector_to_angles
from .headpose import FaceModel3D, HeadPose, default_intrinsics, project_points
from .normalize import head_frame, normalization_transform
from .records import CONTACT, NO_CONTACT, FrameRecord


@dataclass
class SynthConfig:
    participants: int = 5
    frames_per_session: int = 160
    frame_dt: float = 0.5                 # seconds between frames

    device_center: tuple = (0.0, 50.0)    # mm, camera plane
    device_sigma: float = 10.0
    env_centers: tuple = ((250.0, 300.0),)
    env_sigma: float = 30.0
    device_fraction: float = 0.6          # stationary share of device focus
    focus_persistence: float = 0.9        # P(keep focus between frames)

    head_pose_range_deg: float = 25.0
    extreme_pose_fraction: float = 0.05   # anchors drawn beyond the 40 deg band
    lateral_range_mm: float = 40.0
    z_range_mm: tuple = (350.0, 650.0)

    landmark_noise_px: float = 1.0
    feature_dim: int = 64
    feature_separation: float = 6.0       # class mean distance in sigma units

    low_confidence_fraction: float = 0.05
    no_face_fraction: float = 0.02
    image_size: tuple = (640, 480)
    seed: int = 0

    anchor_every: int = 20                # frames between pose anchors

    def validate(self):
        if self.participants < 1 or self.frames_per_session < 1:
            raise PipelineError("participants and frames_per_session must be >= 1")
        if self.frame_dt <= 0:
            raise PipelineError("frame_dt must be positive")
        if self.feature_separation < 0:
            raise PipelineError("feature_separation must be >= 0")
        if not self.env_centers:
            raise PipelineError("need at least one environment target")
        dev_norm = math.hypot(*self.device_center)
        for c in self.env_centers:
            if math.hypot(*c) <= dev_norm:
                raise PipelineError(
                    f"environment target {c} is not farther from the origin than "
                    f"the device target {self.device_center}"
                )
        for name in ("device_sigma", "env_sigma", "feature_dim"):
            if getattr(self, name) <= 0:
                raise PipelineError(f"{name} must be positive")
        for name in ("device_fraction", "focus_persistence", "extreme_pose_fraction",
                     "low_confidence_fraction", "no_face_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise PipelineError(f"{name} must be in [0, 1]")
        return self

    def to_dict(self) -> dict:
        return {
            "participants": self.participants,
            "frames_per_session": self.frames_per_session,
            "frame_dt": self.frame_dt,
            "device_center": list(self.device_center),
            "device_sigma": self.device_sigma,
            "env_centers": [list(c) for c in self.env_centers],
            "env_sigma": self.env_sigma,
            "device_fraction": self.device_fraction,
            "focus_persistence": self.focus_persistence,
            "head_pose_range_deg": self.head_pose_range_deg,
            "extreme_pose_fraction": self.extreme_pose_fraction,
            "lateral_range_mm": self.lateral_range_mm,
            "z_range_mm": list(self.z_range_mm),
            "landmark_noise_px": self.landmark_noise_px,
            "feature_dim": self.feature_dim,
            "feature_separation": self.feature_separation,
            "low_confidence_fraction": self.low_confidence_fraction,
            "no_face_fraction": self.no_face_fraction,
            "image_size": list(self.image_size),
            "seed": self.seed,
            "anchor_every": self.anchor_every,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SynthConfig":
        import dataclasses

        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise PipelineError(f"unknown synth config keys: {sorted(unknown)}")
        obj = dict(obj)
        for key in ("device_center", "image_size", "z_range_mm"):
            if key in obj:
                obj[key] = tuple(obj[key])
        if "env_centers" in obj:
            obj["env_centers"] = tuple(tuple(c) for c in obj["env_centers"])
        return cls(**obj).validate()


@dataclass
class SynthResult:
    records: list
    truth: list                       # CONTACT / NO_CONTACT per record
    config: SynthConfig
    targets: list = field(default_factory=list)   # drawn gaze target per frame or None


def _anchor_angles(rng, cfg) -> np.ndarray:
    angles = rng.uniform(-cfg.head_pose_range_deg, cfg.head_pose_range_deg, size=3)
    if rng.random() < cfg.extreme_pose_fraction:
        axis = rng.integers(0, 2)          # pitch or yaw
        angles[axis] = rng.choice([-1.0, 1.0]) * rng.uniform(47.0, 60.0)
    return angles


def _session_pose_track(rng, cfg):
    """Smooth per-frame (rotation, translation) via interpolated anchors."""
    n = cfg.frames_per_session
    n_anchor = max(2, n // cfg.anchor_every + 1)
    ang = np.array([_anchor_angles(rng, cfg) for _ in range(n_anchor)])
    lat = rng.uniform(-cfg.lateral_range_mm, cfg.lateral_range_mm, size=(n_anchor, 2))
    depth = rng.uniform(cfg.z_range_mm[0], cfg.z_range_mm[1], size=(n_anchor, 1))
    trans = np.hstack([lat, depth])

    ts = np.linspace(0.0, 1.0, n)
    anchor_ts = np.linspace(0.0, 1.0, n_anchor)
    angles = np.column_stack([np.interp(ts, anchor_ts, ang[:, i]) for i in range(3)])
    angles += rng.normal(scale=0.2, size=angles.shape)
    offsets = np.column_stack([np.interp(ts, anchor_ts, trans[:, i]) for i in range(3)])
    offsets += rng.normal(scale=1.0, size=offsets.shape)

    rots = Rotation.from_euler("xyz", angles, degrees=True).as_matrix()
    return rots, offsets


def generate(config: SynthConfig, model: FaceModel3D | None = None) -> SynthResult:
    """Generate a synthetic dataset plus its hidden truth table.

    Byte-identical for a fixed seed.  Frames without a detected face are
    always environment-focused (nobody in front of the camera is treated
    as not looking at it), matching the pipeline's no-face rule.
    """
    cfg = config.validate()
    model = model if model is not None else FaceModel3D.default()
    k = default_intrinsics(*cfg.image_size)

    master = np.random.SeedSequence(cfg.seed)
    # the feature geometry mimics a shared upstream feature extractor: it
    # depends on the dimension only, never on the dataset seed, so models
    # transfer across generated datasets (cross-dataset evaluation works)
    direction = np.random.default_rng(cfg.feature_dim).normal(size=cfg.feature_dim)
    direction /= np.linalg.norm(direction)
    mu_contact = 0.5 * cfg.feature_separation * direction
    mu_no_contact = -0.5 * cfg.feature_separation * direction

    session_seeds = master.spawn(cfg.participants)
    records, truth, targets = [], [], []
    for p_idx in range(cfg.participants):
        rng = np.random.default_rng(session_seeds[p_idx])
        participant = f"p{p_idx:02d}"
        session = f"{participant}-s00"
        rots, offsets = _session_pose_track(rng, cfg)

        focus_device = rng.random() < cfg.device_fraction
        for i in range(cfg.frames_per_session):
            if rng.random() >= cfg.focus_persistence:
                focus_device = rng.random() < cfg.device_fraction
            t = i * cfg.frame_dt
            no_face = rng.random() < cfg.no_face_fraction
            if no_face:
                records.append(
                    FrameRecord(
                        session_id=session, participant_id=participant, t=t,
                        image_size=cfg.image_size, face_detected=False,
                        ground_truth=NO_CONTACT,
                    )
                )
                truth.append(NO_CONTACT)
                targets.append(None)
                continue

            pose = HeadPose(rotation=rots[i], translation=offsets[i], reprojection_rmse=0.0)
            landmarks = project_points(model.points, pose.rotation, pose.translation, k)
            if cfg.landmark_noise_px > 0:
                landmarks = landmarks + rng.normal(scale=cfg.landmark_noise_px, size=landmarks.shape)

            if focus_device:
                target = rng.normal(cfg.device_center, cfg.device_sigma)
            else:
                center = cfg.env_centers[rng.integers(0, len(cfg.env_centers))]
                target = rng.normal(center, cfg.env_sigma)
            frame = head_frame(pose, model)
            origin = frame.origin
            gaze_dir = np.array([target[0], target[1], 0.0]) - origin
            gaze_dir /= np.linalg.norm(gaze_dir)
            norm = normalization_transform(frame, k, gaze_dir=gaze_dir)

            label = CONTACT if focus_device else NO_CONTACT
            mu = mu_contact if focus_device else mu_no_contact
            features = mu + rng.normal(size=cfg.feature_dim)

            if rng.random() < cfg.low_confidence_fraction:
                conf = rng.uniform(0.5, 0.89)
            else:
                conf = rng.uniform(0.92, 1.0)

            records.append(
                FrameRecord(
                    session_id=session, participant_id=participant, t=t,
                    image_size=cfg.image_size, face_detected=True,
                    face_confidence=float(conf),
                    landmarks=landmarks,
                    features=features,
                    gaze_estimate=norm.gaze_n,
                    ground_truth=label,
                )
            )
            truth.append(label)
            targets.append((float(target[0]), float(target[1])))

    return SynthResult(records=records, truth=truth, config=cfg, targets=targets)


@dataclass
class PoseScene:
    """Oracle scenes for the head-pose solvers: known poses, projected
    landmarks (optionally noisy), and the model they came from."""

    model: FaceModel3D
    intrinsics: object
    landmarks: list      # (68, 2) arrays
    poses: list          # HeadPose with zero rmse (the generating truth)


def generate_pose_scene(
    n_poses: int,
    noise_px: float = 0.0,
    seed: int = 0,
    model: FaceModel3D | None = None,
    image_size=(640, 480),
    angle_range_deg: float = 60.0,
    z_range=(200.0, 800.0),
    lateral_range_mm: float = 100.0,
) -> PoseScene:
    """Random poses in the given ranges with exact or noisy projections."""
    if n_poses < 1:
        raise PipelineError("n_poses must be >= 1")
    model = model if model is not None else FaceModel3D.default()
    k = default_intrinsics(*image_size)
    rng = np.random.default_rng(seed)

    landmarks, poses = [], []
    for _ in range(n_poses):
        angles = rng.uniform(-angle_range_deg, angle_range_deg, size=3)
        r = Rotation.from_euler("xyz", angles, degrees=True).as_matrix()
        t = np.array(
            [
                rng.uniform(-lateral_range_mm, lateral_range_mm),
                rng.uniform(-lateral_range_mm, lateral_range_mm),
                rng.uniform(z_range[0], z_range[1]),
            ]
        )
        lm = project_points(model.points, r, t, k)
        if noise_px > 0:
            lm = lm + rng.normal(scale=noise_px, size=lm.shape)
        landmarks.append(lm)
        poses.append(HeadPose(rotation=r, translation=t, reprojection_rmse=0.0))
    return PoseScene(model=model, intrinsics=k, landmarks=landmarks, poses=poses)

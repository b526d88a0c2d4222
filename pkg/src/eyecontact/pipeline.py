"""Stage wiring: pose estimation over a dataset, unsupervised training
(threshold -> intersect -> filter -> cluster -> label -> PCA -> SVM), and
prediction with the no-face rule."""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.spatial.transform import Rotation

from . import classify, labeling
from .config import PipelineConfig
from .errors import GeometryError, NoIntersection, PipelineError
from .gaze import GazeAngles, angles_to_vector, apply_threshold, intersect_plane
from .headpose import FaceModel3D, default_intrinsics, kalman_step, refine_lm, solve_epnp
from .normalize import DEFAULT_INDEX_MAP, head_frame, normalization_transform
from .records import CONTACT, NO_CONTACT, FrameRecord, ModelArtifact, PoseFields, group_by_session

log = logging.getLogger(__name__)


def _augment_session(session_records, config: PipelineConfig, model: FaceModel3D, index_map=DEFAULT_INDEX_MAP):
    """Pose-augment one session: EPnP + LM per frame, Kalman across frames.

    Returns (augmented records, failures) where failures are (record, msg).
    """
    out, failures = [], []
    state = None
    for rec in session_records:
        if not rec.face_detected or rec.landmarks is None:
            out.append(rec)
            continue
        try:
            k = default_intrinsics(*rec.image_size)
            pose = refine_lm(solve_epnp(model, rec.landmarks, k), model, rec.landmarks, k)
            state, smoothed = kalman_step(state, pose, rec.t, config.kalman)
            frame = head_frame(smoothed, model, index_map)
            norm = normalization_transform(frame, k, config.norm_params)
            right = model.points[list(index_map.right_eye)].mean(axis=0)
            left = model.points[list(index_map.left_eye)].mean(axis=0)
            origin = smoothed.rotation @ (0.5 * (right + left)) + smoothed.translation
            fields = PoseFields(
                head_rvec=Rotation.from_matrix(smoothed.rotation).as_rotvec(),
                head_t=smoothed.translation.copy(),
                head_rmse=smoothed.reprojection_rmse,
                gaze_origin=origin,
                norm_rot=norm.rot,
                norm_scale=norm.scale,
                hp_pitch_n=norm.headpose_n.pitch,
                hp_yaw_n=norm.headpose_n.yaw,
            )
            out.append(dataclasses.replace(rec, pose=fields))
        except (GeometryError, PipelineError) as exc:
            log.warning("pose failed for session=%s t=%s: %s", rec.session_id, rec.t, exc)
            failures.append((rec, str(exc)))
            out.append(rec)
    return out, failures


def augment_poses(records, config: PipelineConfig | None = None, model: FaceModel3D | None = None, workers: int = 1):
    """Run the head-pose and normalization stages over a dataset.

    Per-frame failures never abort the run: the frame passes through
    without pose fields and is reported in the failure list.

    Returns:
        (records with PoseFields attached, list of (record, message)).
    """
    config = config or PipelineConfig()
    model = model if model is not None else FaceModel3D.default()
    sessions = group_by_session(records)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(
                pool.map(lambda s: _augment_session(s, config, model), sessions.values())
            )
    else:
        results = [_augment_session(s, config, model) for s in sessions.values()]

    out, failures = [], []
    for recs, fails in results:
        out.extend(recs)
        failures.extend(fails)
    return out, failures


def gaze_points(records, config: PipelineConfig | None = None):
    """Effective-gaze plane intersections for confidence-filtered records.

    Applies adaptive head-pose thresholding, de-rotates the effective
    normalized gaze into camera space (or stays in normalized space per
    config.intersect_in), and intersects with the z=0 plane.

    Returns:
        (kept records, points (M, 2), sources) skipping frames without
        pose fields or without a plane intersection.
    """
    config = config or PipelineConfig()
    kept, pts, sources = [], [], []
    for rec in labeling.filter_confidence(records, config.confidence_tau):
        if rec.pose is None:
            continue
        eff, source = apply_threshold(
            rec.gaze_estimate,
            rec.pose.headpose_n,
            config.threshold_pitch_rad,
            config.threshold_yaw_rad,
        )
        dir_n = angles_to_vector(eff)
        if config.intersect_in == "real":
            direction = rec.pose.norm_rot.T @ dir_n
            origin = rec.pose.gaze_origin
        else:
            direction = dir_n
            origin = rec.pose.norm_scale * (rec.pose.norm_rot @ rec.pose.gaze_origin)
        try:
            p = intersect_plane(origin, direction)
        except NoIntersection:
            continue
        kept.append(rec)
        pts.append([p.x, p.y])
        sources.append(source)
    return kept, (np.array(pts) if pts else np.zeros((0, 2))), sources


def train(records, config: PipelineConfig | None = None, label_source: str = "cluster") -> ModelArtifact:
    """Train the eye-contact classifier.

    label_source "cluster" runs the unsupervised path (records need pose
    fields from augment_poses); "ground_truth" is the annotation ablation
    and trains directly on record labels.

    Raises:
        PipelineError: no features, no device cluster, or single-class
            training labels.
    """
    config = (config or PipelineConfig()).validate()
    records = list(records)
    if not any(r.features is not None for r in records):
        raise PipelineError("dataset has no feature vectors; cannot train")

    if label_source == "ground_truth":
        labeled = [
            (r, 1 if r.ground_truth == CONTACT else -1)
            for r in records
            if r.features is not None and r.ground_truth is not None
        ]
        if not labeled:
            raise PipelineError("ground_truth labeling requested but no labels present")
    elif label_source == "cluster":
        with_pose = [r for r in records if r.pose is not None]
        if not with_pose:
            raise PipelineError("no pose fields present; run the pose stage first")
        kept, pts, _ = gaze_points(records, config)
        kept_pts = [(r, p) for r, p in zip(kept, pts) if r.features is not None]
        if not kept_pts:
            raise PipelineError("no usable gaze points for clustering")
        kept = [r for r, _ in kept_pts]
        pts = np.array([p for _, p in kept_pts])
        min_pts = config.optics_min_pts or labeling.auto_min_pts(len(pts))
        assignment = labeling.optics_cluster(
            pts, min_pts=min_pts, max_eps=config.optics_max_eps, xi=config.optics_xi
        )
        device = labeling.select_device_cluster(assignment)
        labeled = labeling.assign_labels(
            kept, assignment, device, include_noise=config.include_noise_negatives
        )
    else:
        raise PipelineError(f"unknown label_source {label_source!r}")

    x = np.array([r.features for r, _ in labeled])
    y = np.array([lbl for _, lbl in labeled])
    pca = classify.pca_fit(x, retain=config.pca_retain)
    z = classify.pca_project(pca, x)
    svm = classify.svm_train(
        z, y,
        C=config.svm_c,
        weighting=config.svm_weighting,
        max_iter_factor=config.svm_max_iter_factor,
        tol=config.svm_tol,
    )
    snapshot = dict(config.to_dict(), label_source=label_source)
    return ModelArtifact(pca=pca, svm=svm, config_snapshot=snapshot).validate()


def predict(records, artifact: ModelArtifact):
    """Per-frame predictions: (label, score) with score None for frames
    without a detected face, which are always predicted no_contact."""
    out = []
    for rec in records:
        if not rec.face_detected or rec.features is None:
            out.append((NO_CONTACT, None))
            continue
        z = classify.pca_project(artifact.pca, np.asarray(rec.features))
        label, score = classify.svm_predict(artifact.svm, z)
        out.append((CONTACT if label > 0 else NO_CONTACT, score))
    return out


def predict_labels(records, artifact: ModelArtifact):
    return [label for label, _ in predict(records, artifact)]


def make_train_fn(config: PipelineConfig | None = None, label_source: str = "cluster"):
    """train_fn for the evaluation protocols (loocv / cross-dataset)."""
    def train_fn(records):
        return train(records, config=config, label_source=label_source)

    return train_fn


def make_predict_fn():
    def predict_fn(artifact, records):
        return predict_labels(records, artifact)

    return predict_fn

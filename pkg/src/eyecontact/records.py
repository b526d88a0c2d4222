"""Per-frame data model and persistence.

Datasets are JSONL: one frame record per line, optional fields omitted
(never null).  Field names are part of the wire format and must not
change: session_id, participant_id, t, image_w, image_h, face_detected,
face_confidence, landmarks (flat array of 136 numbers, x0,y0,...,x67,y67),
features, gaze_pitch, gaze_yaw, label ("contact"|"no_contact"),
illumination.

The pose stage appends its own optional fields: head_rvec, head_t,
head_rmse, gaze_origin, norm_rot (row-major 3x3), norm_scale, hp_pitch_n,
hp_yaw_n.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .classify import PcaModel, SvmModel
from .errors import DatasetError
from .gaze import GazeAngles

CONTACT = "contact"
NO_CONTACT = "no_contact"
LABELS = (CONTACT, NO_CONTACT)

MODEL_FORMAT_VERSION = 1


@dataclass
class PoseFields:
    """Head-pose augmentation attached to a record by the pose stage."""

    head_rvec: np.ndarray       # (3,) rotation vector, rad
    head_t: np.ndarray          # (3,) mm
    head_rmse: float            # px
    gaze_origin: np.ndarray     # (3,) mm, camera space
    norm_rot: np.ndarray        # (3, 3) camera -> normalized camera
    norm_scale: float
    hp_pitch_n: float           # head facing in normalized space, rad
    hp_yaw_n: float

    @property
    def headpose_n(self) -> GazeAngles:
        return GazeAngles(self.hp_pitch_n, self.hp_yaw_n)


@dataclass
class FrameRecord:
    """One camera frame's derived observations."""

    session_id: str
    participant_id: str
    t: float                                # seconds, monotonic within session
    image_size: tuple[int, int]             # (width, height) px
    face_detected: bool
    face_confidence: Optional[float] = None
    landmarks: Optional[np.ndarray] = None  # (68, 2) px
    features: Optional[np.ndarray] = None   # (D,)
    gaze_estimate: Optional[GazeAngles] = None  # normalized-space angles
    ground_truth: Optional[str] = None      # CONTACT | NO_CONTACT
    illumination: Optional[str] = None
    pose: Optional[PoseFields] = None

    def validate(self):
        if not np.isfinite(self.t):
            raise DatasetError("timestamp must be finite")
        if self.image_size[0] < 1 or self.image_size[1] < 1:
            raise DatasetError("image size must be positive")
        if not self.face_detected:
            if any(x is not None for x in (self.landmarks, self.features, self.gaze_estimate)):
                raise DatasetError(
                    "landmarks/features/gaze must be absent when no face was detected"
                )
        if self.face_confidence is not None and not 0.0 <= self.face_confidence <= 1.0:
            raise DatasetError(f"face_confidence {self.face_confidence} outside [0, 1]")
        if self.landmarks is not None:
            lm = np.asarray(self.landmarks, dtype=float)
            if lm.shape != (68, 2):
                raise DatasetError(f"expected 68 landmarks, got shape {lm.shape}")
            if not np.all(np.isfinite(lm)):
                raise DatasetError("landmarks must be finite")
        if self.features is not None and not np.all(np.isfinite(self.features)):
            raise DatasetError("features must be finite")
        if self.ground_truth is not None and self.ground_truth not in LABELS:
            raise DatasetError(f"unknown label {self.ground_truth!r}")
        return self


def _record_to_obj(rec: FrameRecord) -> dict:
    obj = {
        "session_id": rec.session_id,
        "participant_id": rec.participant_id,
        "t": float(rec.t),
        "image_w": int(rec.image_size[0]),
        "image_h": int(rec.image_size[1]),
        "face_detected": bool(rec.face_detected),
    }
    if rec.face_confidence is not None:
        obj["face_confidence"] = float(rec.face_confidence)
    if rec.landmarks is not None:
        obj["landmarks"] = [float(v) for v in np.asarray(rec.landmarks).ravel()]
    if rec.features is not None:
        obj["features"] = [float(v) for v in np.asarray(rec.features)]
    if rec.gaze_estimate is not None:
        obj["gaze_pitch"] = float(rec.gaze_estimate.pitch)
        obj["gaze_yaw"] = float(rec.gaze_estimate.yaw)
    if rec.ground_truth is not None:
        obj["label"] = rec.ground_truth
    if rec.illumination is not None:
        obj["illumination"] = rec.illumination
    if rec.pose is not None:
        p = rec.pose
        obj["head_rvec"] = [float(v) for v in p.head_rvec]
        obj["head_t"] = [float(v) for v in p.head_t]
        obj["head_rmse"] = float(p.head_rmse)
        obj["gaze_origin"] = [float(v) for v in p.gaze_origin]
        obj["norm_rot"] = [float(v) for v in np.asarray(p.norm_rot).ravel()]
        obj["norm_scale"] = float(p.norm_scale)
        obj["hp_pitch_n"] = float(p.hp_pitch_n)
        obj["hp_yaw_n"] = float(p.hp_yaw_n)
    return obj


def _obj_to_record(obj: dict) -> FrameRecord:
    try:
        landmarks = None
        if "landmarks" in obj:
            flat = np.asarray(obj["landmarks"], dtype=float)
            if flat.size != 136:
                raise DatasetError(f"landmarks must hold 136 numbers, got {flat.size}")
            landmarks = flat.reshape(68, 2)
        gaze = None
        if "gaze_pitch" in obj or "gaze_yaw" in obj:
            gaze = GazeAngles(float(obj["gaze_pitch"]), float(obj["gaze_yaw"]))
        pose = None
        if "head_rvec" in obj:
            pose = PoseFields(
                head_rvec=np.asarray(obj["head_rvec"], dtype=float),
                head_t=np.asarray(obj["head_t"], dtype=float),
                head_rmse=float(obj["head_rmse"]),
                gaze_origin=np.asarray(obj["gaze_origin"], dtype=float),
                norm_rot=np.asarray(obj["norm_rot"], dtype=float).reshape(3, 3),
                norm_scale=float(obj["norm_scale"]),
                hp_pitch_n=float(obj["hp_pitch_n"]),
                hp_yaw_n=float(obj["hp_yaw_n"]),
            )
        rec = FrameRecord(
            session_id=str(obj["session_id"]),
            participant_id=str(obj["participant_id"]),
            t=float(obj["t"]),
            image_size=(int(obj["image_w"]), int(obj["image_h"])),
            face_detected=bool(obj["face_detected"]),
            face_confidence=(
                float(obj["face_confidence"]) if "face_confidence" in obj else None
            ),
            landmarks=landmarks,
            features=(
                np.asarray(obj["features"], dtype=float) if "features" in obj else None
            ),
            gaze_estimate=gaze,
            ground_truth=obj.get("label"),
            illumination=obj.get("illumination"),
            pose=pose,
        )
    except KeyError as exc:
        raise DatasetError(f"missing required field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise DatasetError(str(exc)) from exc
    return rec.validate()


def _check_dataset(records: list[FrameRecord]):
    """Dataset-level invariants: per-session strictly increasing timestamps
    and one feature dimension for the whole dataset."""
    last_t: dict[str, float] = {}
    feature_dim = None
    for rec in records:
        if rec.session_id in last_t and rec.t <= last_t[rec.session_id]:
            raise DatasetError(
                f"non-monotonic timestamps in session {rec.session_id!r} "
                f"(t={rec.t} after t={last_t[rec.session_id]})"
            )
        last_t[rec.session_id] = rec.t
        if rec.features is not None:
            d = len(rec.features)
            if feature_dim is None:
                feature_dim = d
            elif d != feature_dim:
                raise DatasetError(
                    f"inconsistent feature dimension: {d} after {feature_dim}"
                )


def read_dataset(path, *, on_bad_line: str = "error", bad_lines: list | None = None):
    """Read a JSONL dataset into records grouped by session and sorted by
    timestamp (first-appearance order of sessions is preserved).

    Args:
        path: JSONL file path.
        on_bad_line: 'error' raises DatasetError naming the offending line;
            'skip' drops the line and continues.
        bad_lines: optional list receiving (line_number, message) for every
            skipped line.

    Raises:
        DatasetError: malformed line, schema violation, non-monotonic
            timestamps (naming the session), or mixed feature dimensions.
    """
    if on_bad_line not in ("error", "skip"):
        raise ValueError("on_bad_line must be 'error' or 'skip'")

    parsed: list[tuple[int, FrameRecord]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise DatasetError("line is not a JSON object")
                parsed.append((lineno, _obj_to_record(obj)))
            except (json.JSONDecodeError, DatasetError) as exc:
                if on_bad_line == "error":
                    raise DatasetError(f"line {lineno}: {exc}") from exc
                if bad_lines is not None:
                    bad_lines.append((lineno, str(exc)))

    # keep per-session timestamp order and dataset-wide feature dimension
    last_t: dict[str, float] = {}
    feature_dim = None
    records: list[FrameRecord] = []
    for lineno, rec in parsed:
        problem = None
        if rec.session_id in last_t and rec.t <= last_t[rec.session_id]:
            problem = (
                f"non-monotonic timestamps in session {rec.session_id!r} "
                f"(t={rec.t} after t={last_t[rec.session_id]})"
            )
        elif rec.features is not None and feature_dim is not None and len(rec.features) != feature_dim:
            problem = f"inconsistent feature dimension: {len(rec.features)} after {feature_dim}"
        if problem:
            if on_bad_line == "error":
                raise DatasetError(f"line {lineno}: {problem}")
            if bad_lines is not None:
                bad_lines.append((lineno, problem))
            continue
        last_t[rec.session_id] = rec.t
        if rec.features is not None and feature_dim is None:
            feature_dim = len(rec.features)
        records.append(rec)

    session_order = {}
    for rec in records:
        session_order.setdefault(rec.session_id, len(session_order))
    records.sort(key=lambda r: (session_order[r.session_id], r.t))
    return records


def write_dataset(records, path) -> None:
    """Write records as JSONL; the exact inverse of read_dataset."""
    records = list(records)
    for rec in records:
        rec.validate()
    _check_dataset(records)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(_record_to_obj(rec)) + "\n")


def group_by_session(records) -> dict[str, list[FrameRecord]]:
    """Session id -> records, preserving first-appearance order."""
    out: dict[str, list[FrameRecord]] = {}
    for rec in records:
        out.setdefault(rec.session_id, []).append(rec)
    return out


@dataclass
class ModelArtifact:
    """Trained PCA + SVM pair plus the configuration that produced it."""

    pca: PcaModel
    svm: SvmModel
    config_snapshot: dict = field(default_factory=dict)
    format_version: int = MODEL_FORMAT_VERSION

    def validate(self):
        if self.pca.n_components != self.svm.input_dim:
            raise DatasetError(
                f"PCA output dimension {self.pca.n_components} does not match "
                f"SVM input dimension {self.svm.input_dim}"
            )
        return self


def save_model(artifact: ModelArtifact, path) -> None:
    artifact.validate()
    pca, svm = artifact.pca, artifact.svm
    obj = {
        "format_version": artifact.format_version,
        "pca": {
            "mean": [float(v) for v in pca.mean],
            "components_shape": list(pca.components.shape),
            "components": [float(v) for v in pca.components.ravel()],
            "explained_variance": [float(v) for v in pca.explained_variance],
        },
        "svm": {
            "weights": [float(v) for v in svm.weights],
            "bias": float(svm.bias),
            "class_weights": {str(k): float(v) for k, v in svm.class_weights.items()},
            "C": float(svm.C),
        },
        "config_snapshot": artifact.config_snapshot,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


def load_model(path) -> ModelArtifact:
    """Load a model artifact; unknown format versions are refused."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"not a valid model file: {exc}") from exc
    version = obj.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise DatasetError(f"unrecognized model format version: {version!r}")
    try:
        p = obj["pca"]
        shape = tuple(p["components_shape"])
        pca = PcaModel(
            mean=np.asarray(p["mean"], dtype=float),
            components=np.asarray(p["components"], dtype=float).reshape(shape),
            explained_variance=np.asarray(p["explained_variance"], dtype=float),
        )
        s = obj["svm"]
        svm = SvmModel(
            weights=np.asarray(s["weights"], dtype=float),
            bias=float(s["bias"]),
            class_weights={int(k): float(v) for k, v in s["class_weights"].items()},
            C=float(s["C"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"malformed model file: {exc}") from exc
    return ModelArtifact(
        pca=pca, svm=svm, config_snapshot=obj.get("config_snapshot", {}),
        format_version=version,
    ).validate()

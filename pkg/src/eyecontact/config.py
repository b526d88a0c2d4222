"""Pipeline configuration: every tunable in one place, with defaults that
match the published operating point (40 degree head-pose thresholds, 0.9
face-confidence cutoff, 95% PCA variance, 960 px normalized focal length,
300 mm normalized distance, 448 px output)."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

from .errors import PipelineError
from .headpose import KalmanConfig
from .normalize import NormParams


@dataclass
class PipelineConfig:
    # adaptive head-pose thresholding (degrees, normalized space)
    threshold_pitch_deg: float = 40.0
    threshold_yaw_deg: float = 40.0

    # confidence filtering
    confidence_tau: float = 0.9

    # OPTICS clustering; min_pts None = auto (5% of samples, at least 10)
    optics_min_pts: int | None = None
    optics_max_eps: float = math.inf
    optics_xi: float = 0.05
    include_noise_negatives: bool = True

    # classifier
    pca_retain: float = 0.95
    svm_c: float = 1.0
    svm_weighting: str = "balanced"      # "balanced" | "none"
    svm_max_iter_factor: int = 1000      # pair-update budget per sample
    svm_tol: float = 1e-3                # maximal KKT violation

    # normalization
    norm_focal: float = 960.0
    norm_distance: float = 300.0
    norm_size_w: int = 448
    norm_size_h: int = 448

    # Kalman smoothing
    kalman_process_noise_rot: float = 0.02
    kalman_process_noise_trans: float = 5.0
    kalman_meas_noise_rot: float = 0.05
    kalman_meas_noise_trans: float = 10.0

    # gaze-plane intersection ("real" camera plane or "normalized")
    intersect_in: str = "real"

    # attention timeline
    glance_max: float = 1.5
    max_frame_span: float = 1.0
    max_gap: float = 30.0

    def validate(self):
        pos = [
            ("threshold_pitch_deg", 0.0, 180.0), ("threshold_yaw_deg", 0.0, 180.0),
            ("confidence_tau", 0.0, 1.0), ("optics_xi", 0.0, 1.0),
            ("pca_retain", 0.0, 1.0),
        ]
        for name, lo, hi in pos:
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise PipelineError(f"config {name}={v} outside [{lo}, {hi}]")
        for name in (
            "svm_c", "norm_focal", "norm_distance", "glance_max",
            "max_frame_span", "max_gap", "optics_max_eps",
            "kalman_process_noise_rot", "kalman_process_noise_trans",
            "kalman_meas_noise_rot", "kalman_meas_noise_trans",
        ):
            if getattr(self, name) <= 0:
                raise PipelineError(f"config {name} must be positive")
        if self.optics_min_pts is not None and self.optics_min_pts < 2:
            raise PipelineError("optics_min_pts must be >= 2")
        if self.svm_weighting not in ("balanced", "none"):
            raise PipelineError(f"unknown svm_weighting {self.svm_weighting!r}")
        if self.intersect_in not in ("real", "normalized"):
            raise PipelineError(f"unknown intersect_in {self.intersect_in!r}")
        if self.norm_size_w < 1 or self.norm_size_h < 1:
            raise PipelineError("normalized image size must be positive")
        return self

    @property
    def threshold_pitch_rad(self) -> float:
        return math.radians(self.threshold_pitch_deg)

    @property
    def threshold_yaw_rad(self) -> float:
        return math.radians(self.threshold_yaw_deg)

    @property
    def norm_params(self) -> NormParams:
        return NormParams(
            focal_norm=self.norm_focal,
            distance_norm=self.norm_distance,
            out_size=(self.norm_size_w, self.norm_size_h),
        )

    @property
    def kalman(self) -> KalmanConfig:
        return KalmanConfig(
            process_noise_rot=self.kalman_process_noise_rot,
            process_noise_trans=self.kalman_process_noise_trans,
            meas_noise_rot=self.kalman_meas_noise_rot,
            meas_noise_trans=self.kalman_meas_noise_trans,
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        if math.isinf(out["optics_max_eps"]):
            out["optics_max_eps"] = "inf"
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "PipelineConfig":
        """Build a config from a dict; unknown keys are rejected."""
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise PipelineError(f"unknown config keys: {sorted(unknown)}")
        obj = dict(obj)
        if obj.get("optics_max_eps") == "inf":
            obj["optics_max_eps"] = math.inf
        return cls(**obj).validate()

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise PipelineError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise PipelineError("config file must hold a JSON object")
        return cls.from_dict(obj)

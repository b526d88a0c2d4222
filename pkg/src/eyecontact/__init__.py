"""Unsupervised eye-contact detection and attention analytics for mobile
front-camera recordings.

The pipeline: 68-landmark head-pose estimation (EPnP + Levenberg-Marquardt
+ Kalman smoothing), normalization to a fixed virtual camera, adaptive
head-pose thresholding of gaze estimates, OPTICS clustering of on-plane
gaze points into automatic eye-contact labels, and a PCA + class-weighted
linear SVM classifier, with MCC/TNR evaluation protocols and attention
metrics (glances, shifts, spans, primary focus) on top.
"""

from . import classify, config, gaze, headpose, labeling, metrics, normalize, pipeline, records, synth
from .config import PipelineConfig
from .errors import (
    ConvergenceError,
    DatasetError,
    GeometryError,
    NoDeviceCluster,
    NoIntersection,
    PipelineError,
)

__version__ = "0.1.0"

__all__ = [
    "classify", "config", "gaze", "headpose", "labeling", "metrics",
    "normalize", "pipeline", "records", "synth",
    "PipelineConfig",
    "PipelineError", "DatasetError", "GeometryError", "NoIntersection",
    "NoDeviceCluster", "ConvergenceError",
    "__version__",
]

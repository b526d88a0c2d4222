"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for all library errors."""


class DatasetError(PipelineError):
    """Malformed dataset file or records violating the frame-record schema."""


class GeometryError(PipelineError):
    """Degenerate geometric input (collinear points, singular systems, ...)."""


class NoIntersection(PipelineError):
    """Gaze ray does not hit the camera plane (parallel or pointing away)."""


class NoDeviceCluster(PipelineError):
    """Clustering produced no clusters, so no device cluster can be selected."""


class ConvergenceError(PipelineError):
    """Iterative solver exhausted its iteration budget.

    Carries the final optimality gap in ``gap``.
    """

    def __init__(self, message, gap=None):
        super().__init__(message)
        self.gap = gap

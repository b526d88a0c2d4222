import numpy as np
import pytest

from eyecontact.headpose import FaceModel3D


@pytest.fixture(scope="session")
def synthetic_model() -> FaceModel3D:
    """A random non-planar 68-point cloud; correctness tests use this so
    nothing depends on the shipped face model's exact coordinates."""
    rng = np.random.default_rng(1234)
    pts = rng.normal(scale=[40.0, 50.0, 25.0], size=(68, 3))
    return FaceModel3D(points=pts)


@pytest.fixture(scope="session")
def shipped_model() -> FaceModel3D:
    return FaceModel3D.default()

import numpy as np
import pytest

from mvtrack.camera import CameraIntrinsics, CameraView
from mvtrack.geometry import RigidTransform, Twist, exp_se3


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_rotation(rng, max_angle=np.pi):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(-max_angle, max_angle)
    return exp_se3(Twist(np.zeros(3), angle * axis)).rotation


def random_transform(rng, max_angle=np.pi, span_mm=500.0):
    return RigidTransform(
        random_rotation(rng, max_angle), rng.uniform(-span_mm, span_mm, size=3)
    )


def random_twist(rng, max_angle=np.pi, span_mm=100.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Twist(
        rng.uniform(-span_mm, span_mm, size=3), rng.uniform(0.0, max_angle) * axis
    )


@pytest.fixture
def simple_view():
    """Identity extrinsics, VGA-ish pinhole."""
    intr = CameraIntrinsics(fx=1000.0, fy=1000.0, cx=320.0, cy=256.0, width=640, height=512)
    return CameraView(intr, RigidTransform.identity(), index=0)

"""SE(3)/se(3) primitives shared by every stage of the tracker.

Conventions used throughout the package:
  * twists are translation-first: the flattened 6-vector is (rho, phi), so the
    point Jacobian has the block layout [I | -skew(p)]
  * lengths are millimeters, angles radians
  * transforms act on column points, p' = R p + t
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

SMALL_ANGLE = 1e-8
_ORTHO_TOL = 1e-9


class FrameTag(enum.Enum):
    TEMPLATE = "template"
    OBJECT = "object"
    CAMERA = "camera"


class FrameMismatchError(ValueError):
    """A tagged point was supplied in a frame the operation does not accept."""


def _vec3(v, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.shape != (3,):
        raise ValueError(f"{name}: expected 3-vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: components must be finite")
    return a


@dataclass(frozen=True)
class Twist:
    """se(3) element: rho translational (mm), phi rotational (rad)."""

    rho: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rho", _vec3(self.rho, "rho"))
        object.__setattr__(self, "phi", _vec3(self.phi, "phi"))

    @staticmethod
    def zero() -> "Twist":
        return Twist(np.zeros(3), np.zeros(3))

    @staticmethod
    def from_vector(v) -> "Twist":
        a = np.asarray(v, dtype=float).reshape(6)
        return Twist(a[:3], a[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rho, self.phi])

    def norms(self) -> tuple[float, float]:
        return float(np.linalg.norm(self.rho)), float(np.linalg.norm(self.phi))


@dataclass(frozen=True)
class Point3:
    """A 3D point (mm) tagged with the frame it lives in."""

    xyz: np.ndarray
    frame: FrameTag

    def __post_init__(self):
        object.__setattr__(self, "xyz", _vec3(self.xyz, "xyz"))
        if not isinstance(self.frame, FrameTag):
            raise FrameMismatchError(f"unknown frame tag {self.frame!r}")


def point_coords(point, expected_frame: FrameTag | None = None) -> np.ndarray:
    """Unwrap a Point3 (checking its tag) or pass a raw array through."""
    if isinstance(point, Point3):
        if expected_frame is not None and point.frame is not expected_frame:
            raise FrameMismatchError(
                f"point tagged {point.frame.value}, operation expects {expected_frame.value}"
            )
        return point.xyz
    return np.asarray(point, dtype=float)


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) element: 3x3 rotation plus translation (mm)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        t = _vec3(self.translation, "translation")
        if R.shape != (3, 3):
            raise ValueError(f"rotation: expected 3x3, got {R.shape}")
        if not np.all(np.isfinite(R)):
            raise ValueError("rotation: entries must be finite")
        if np.max(np.abs(R.T @ R - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("rotation: not orthonormal within 1e-9")
        if abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation: determinant must be +1 within 1e-9")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(m) -> "RigidTransform":
        a = np.asarray(m, dtype=float)
        if a.shape != (4, 4):
            raise ValueError(f"expected 4x4 homogeneous matrix, got {a.shape}")
        if np.max(np.abs(a[3] - np.array([0.0, 0.0, 0.0, 1.0]))) > 1e-9:
            raise ValueError("last row of a homogeneous transform must be [0 0 0 1]")
        return RigidTransform(a[:3, :3], a[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        """Transform one (3,) point or a stack (..., 3) of points."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def hat(t: Twist) -> np.ndarray:
    """4x4 matrix form of a twist: skew(phi) in the top-left, rho in the last column."""
    m = np.zeros((4, 4))
    m[:3, :3] = skew(t.phi)
    m[:3, 3] = t.rho
    return m


def exp_se3(t: Twist) -> RigidTransform:
    """Exponential map se(3) -> SE(3).

    Uses the closed-form Rodrigues expression; below SMALL_ANGLE the rotation
    and the V matrix fall back to their second-order series to avoid the 1/theta
    cancellation.
    """
    phi = t.phi
    theta = float(np.linalg.norm(phi))
    W = skew(phi)
    W2 = W @ W
    eye = np.eye(3)
    if theta < SMALL_ANGLE:
        R = eye + W + 0.5 * W2
        V = eye + 0.5 * W + W2 / 6.0
    else:
        s, c = np.sin(theta), np.cos(theta)
        R = eye + (s / theta) * W + ((1.0 - c) / theta**2) * W2
        V = eye + ((1.0 - c) / theta**2) * W + ((theta - s) / theta**3) * W2
    return RigidTransform(R, V @ t.rho)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """(a o b) applied to x equals a(b(x))."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -rt @ t.translation)


def point_jacobian(transform: RigidTransform, point) -> np.ndarray:
    """Derivative of exp(eps^) @ (transform @ point) w.r.t. the twist at eps = 0.

    Returns (3, 6) for a single point, (N, 3, 6) for a stack: left block is the
    identity, right block -skew of the transformed point.
    """
    x = point_coords(point)
    p = transform.apply(x)
    if p.ndim == 1:
        J = np.zeros((3, 6))
        J[:, :3] = np.eye(3)
        J[:, 3:] = -skew(p)
        return J
    n = p.shape[0]
    J = np.zeros((n, 3, 6))
    J[:, :, :3] = np.eye(3)
    px, py, pz = p[:, 0], p[:, 1], p[:, 2]
    J[:, 0, 4] = pz
    J[:, 0, 5] = -py
    J[:, 1, 3] = -pz
    J[:, 1, 5] = px
    J[:, 2, 3] = py
    J[:, 2, 4] = -px
    return J

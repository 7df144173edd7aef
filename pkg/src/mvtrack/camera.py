"""Pinhole projection in the object-centered frame and its derivatives.

Pixel convention: origin at the top-left corner, +x right, +y down, pixel
centers at integer coordinates. Cameras are assumed pre-rectified (no
distortion model).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import FrameTag, RigidTransform, invert, point_coords, point_jacobian


class BehindCameraError(ValueError):
    """A point required by a projection has non-positive camera-frame depth."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")

    def scaled(self, width: int) -> "CameraIntrinsics":
        """Same field of view at a different horizontal resolution (aspect kept)."""
        s = width / self.width
        return CameraIntrinsics(
            fx=self.fx * s,
            fy=self.fy * s,
            cx=self.cx * s,
            cy=self.cy * s,
            width=int(round(width)),
            height=int(round(self.height * s)),
        )


@dataclass(frozen=True)
class CameraView:
    """One camera of a rig: intrinsics plus the transform camera -> object frame.

    A rig is a list of views sharing a single object-centered frame.
    """

    intrinsics: CameraIntrinsics
    object_from_camera: RigidTransform
    index: int = 0


def camera_points(view: CameraView, x_o) -> np.ndarray:
    """Map object-frame points into the camera frame (no depth check)."""
    x = point_coords(x_o, FrameTag.OBJECT)
    return invert(view.object_from_camera).apply(x)


def project(view: CameraView, x_o) -> np.ndarray:
    """Project object-frame point(s) to pixels; raises BehindCameraError if depth <= 0."""
    pc = camera_points(view, x_o)
    single = pc.ndim == 1
    p = pc[None, :] if single else pc
    depth = p[:, 2]
    if np.any(depth <= 0.0):
        raise BehindCameraError("point depth must be positive for projection")
    K = view.intrinsics
    pix = np.empty((p.shape[0], 2))
    pix[:, 0] = (K.fx * p[:, 0] + K.cx * depth) / depth
    pix[:, 1] = (K.fy * p[:, 1] + K.cy * depth) / depth
    return pix[0] if single else pix


def projection_point_jacobian(view: CameraView, x_o) -> np.ndarray:
    """2x3 derivative of the projected pixel w.r.t. the object-frame point.

    Quotient rule applied to x = (fx*A + cx*C)/C, y = (fy*B + cy*C)/C where
    (A, B, C) are the camera-frame coordinates; the cx/cy terms cancel.
    Returns (2, 3) or (N, 2, 3).
    """
    pc = camera_points(view, x_o)
    single = pc.ndim == 1
    p = pc[None, :] if single else pc
    C = p[:, 2]
    if np.any(C <= 0.0):
        raise BehindCameraError("point depth must be positive for the projection Jacobian")
    K = view.intrinsics
    R = invert(view.object_from_camera).rotation  # rows: dA/dX, dB/dX, dC/dX
    A, B = p[:, 0], p[:, 1]
    invc2 = 1.0 / (C * C)
    J = np.empty((p.shape[0], 2, 3))
    J[:, 0, :] = K.fx * (R[0][None, :] * C[:, None] - A[:, None] * R[2][None, :]) * invc2[:, None]
    J[:, 1, :] = K.fy * (R[1][None, :] * C[:, None] - B[:, None] * R[2][None, :]) * invc2[:, None]
    return J[0] if single else J


def full_pose_jacobian(view: CameraView, x_o, current: RigidTransform | None = None) -> np.ndarray:
    """2x6 derivative of the projected pixel w.r.t. the pose twist.

    Chains the projection Jacobian with the point Jacobian, both evaluated at
    the current-pose point current @ x_o. Returns (2, 6) or (N, 2, 6).
    """
    cur = RigidTransform.identity() if current is None else current
    x = point_coords(x_o, FrameTag.OBJECT)
    p = cur.apply(x)
    jp = projection_point_jacobian(view, p)
    jx = point_jacobian(cur, x)
    if p.ndim == 1:
        return jp @ jx
    return np.einsum("nij,njk->nik", jp, jx)


def pixel_to_spatial_error(pixel_error: float, focal: float, depth: float) -> float:
    """Spatial displacement (mm) that maps to a given pixel error at depth.

    Inverse of x = (f/Z) * X + c, so the answer is pixel_error * depth / focal.
    """
    if focal <= 0:
        raise ValueError("focal length must be positive")
    if depth <= 0:
        raise ValueError("depth must be positive")
    return pixel_error * depth / focal

"""Pose error metrics and sequence scoring for 6DOF tracking benchmarks.

Success thresholds use <= (an error of exactly n degrees counts as success);
the reset rule uses > (strictly larger than 5 deg / 5 cm fires a reset), so a
frame sitting exactly on the threshold succeeds and does not reset.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .mesh import TriangleMesh

REPORT_SCHEMA = "mvtrack-report v1"


class NotARotationError(ValueError):
    """Input matrix is not orthonormal with unit determinant."""


class EmptyMeshError(ValueError):
    """ADD needs at least one model point."""


def _check_rotation(R, tol: float = 1e-6) -> np.ndarray:
    a = np.asarray(R, dtype=float)
    if a.shape != (3, 3):
        raise NotARotationError(f"expected 3x3 rotation, got {a.shape}")
    if np.max(np.abs(a.T @ a - np.eye(3))) > tol or abs(np.linalg.det(a) - 1.0) > tol:
        raise NotARotationError("matrix is not a rotation")
    return a


def rotation_error(R_hat, R) -> float:
    """Geodesic rotation error in degrees: acos((trace(Rh^T R) - 1) / 2)."""
    a = _check_rotation(R_hat)
    b = _check_rotation(R)
    c = 0.5 * (np.trace(a.T @ b) - 1.0)
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def translation_error(t_hat, t, reference_rotation=None) -> tuple[float, np.ndarray]:
    """Euclidean translation error (mm) plus the per-axis decomposition.

    The per-axis vector is (t_hat - t) expressed in the reference camera frame
    when a camera_from_world rotation is given; otherwise in the input frame.
    """
    d = np.asarray(t_hat, dtype=float) - np.asarray(t, dtype=float)
    if not np.all(np.isfinite(d)):
        raise ValueError("translations must be finite")
    per_axis = d if reference_rotation is None else np.asarray(reference_rotation) @ d
    return float(np.linalg.norm(d)), per_axis


def add_error(mesh, pose_hat, pose_gt) -> float:
    """Mean distance between model points under the two poses (mm)."""
    pts = mesh.vertices if isinstance(mesh, TriangleMesh) else np.asarray(mesh, dtype=float)
    if pts.size == 0:
        raise EmptyMeshError("no model points")
    d = pose_hat.apply(pts) - pose_gt.apply(pts)
    return float(np.mean(np.linalg.norm(d, axis=1)))


@dataclass(frozen=True)
class PoseError:
    rotation_deg: float
    translation_mm: float
    per_axis_mm: np.ndarray
    add_mm: float


@dataclass(frozen=True)
class MetricThresholds:
    deg_cm_pairs: tuple = ((5.0, 5.0), (2.0, 2.0))
    deg_singles: tuple = (5.0, 2.0)
    cm_singles: tuple = (5.0, 2.0)
    add_fractions: tuple = (0.02, 0.05, 0.1)
    auc_max_fraction: float = 0.2
    reset_rotation_deg: float = 5.0
    reset_translation_mm: float = 50.0


@dataclass
class SequenceReport:
    frames: list                 # PoseError per frame
    resets: list                 # frame indices where the reset rule fired
    success: dict                # metric name -> success rate in percent
    auc: float                   # area under the ADD success curve, in [0, 1]
    bbox_diameter_mm: float
    timing_ms: float | None = None

    @property
    def frame_count(self) -> int:
        return len(self.frames)


def _fmt_threshold(v: float) -> str:
    return f"{v:g}"


def score_sequence(
    pred_poses,
    gt_poses,
    mesh: TriangleMesh,
    thresholds: MetricThresholds = MetricThresholds(),
    reference_rotation=None,
    timing_ms: float | None = None,
) -> SequenceReport:
    """Per-frame errors plus aggregate success rates, resets, and ADD AUC.

    The AUC integrates the ADD success fraction over thresholds from 0 to
    auc_max_fraction * d exactly: each frame contributes
    clip(1 - add / (auc_max_fraction * d), 0, 1).
    """
    if len(pred_poses) != len(gt_poses):
        raise ValueError(f"frame count mismatch: {len(pred_poses)} vs {len(gt_poses)}")
    if len(pred_poses) == 0:
        raise ValueError("empty sequence")
    d = mesh.bbox_longest_side
    frames = []
    resets = []
    for k, (ph, pg) in enumerate(zip(pred_poses, gt_poses)):
        rot = rotation_error(ph.rotation, pg.rotation)
        trans, per_axis = translation_error(ph.translation, pg.translation, reference_rotation)
        add = add_error(mesh, ph, pg)
        frames.append(PoseError(rot, trans, np.abs(per_axis), add))
        if rot > thresholds.reset_rotation_deg or trans > thresholds.reset_translation_mm:
            resets.append(k)

    n = len(frames)
    rot = np.array([f.rotation_deg for f in frames])
    trans = np.array([f.translation_mm for f in frames])
    add = np.array([f.add_mm for f in frames])

    success: dict[str, float] = {}
    for frac in thresholds.add_fractions:
        success[f"ADD-{_fmt_threshold(frac)}d"] = 100.0 * float(np.mean(add <= frac * d))
    for deg, cm in thresholds.deg_cm_pairs:
        key = f"{_fmt_threshold(deg)}deg_{_fmt_threshold(cm)}cm"
        success[key] = 100.0 * float(np.mean((rot <= deg) & (trans <= cm * 10.0)))
    for deg in thresholds.deg_singles:
        success[f"{_fmt_threshold(deg)}deg"] = 100.0 * float(np.mean(rot <= deg))
    for cm in thresholds.cm_singles:
        success[f"{_fmt_threshold(cm)}cm"] = 100.0 * float(np.mean(trans <= cm * 10.0))

    ramp = thresholds.auc_max_fraction * d
    auc = float(np.mean(np.clip(1.0 - add / ramp, 0.0, 1.0)))

    return SequenceReport(frames, resets, success, auc, d, timing_ms)


def report_to_csv(report: SequenceReport) -> str:
    """One row per frame; the header carries the schema version."""
    lines = [f"# {REPORT_SCHEMA}"]
    lines.append("frame,rotation_deg,translation_mm,tx_mm,ty_mm,tz_mm,add_mm,reset")
    reset_set = set(report.resets)
    for k, f in enumerate(report.frames):
        ax = f.per_axis_mm
        lines.append(
            f"{k},{f.rotation_deg:.9g},{f.translation_mm:.9g},"
            f"{ax[0]:.9g},{ax[1]:.9g},{ax[2]:.9g},{f.add_mm:.9g},{int(k in reset_set)}"
        )
    return "\n".join(lines) + "\n"


def report_to_json(report: SequenceReport) -> str:
    payload = {
        "schema": REPORT_SCHEMA,
        "frames": report.frame_count,
        "resets": list(report.resets),
        "reset_count": len(report.resets),
        "success": report.success,
        "add_auc": report.auc,
        "bbox_diameter_mm": report.bbox_diameter_mm,
        "mean_rotation_deg": float(np.mean([f.rotation_deg for f in report.frames])),
        "mean_translation_mm": float(np.mean([f.translation_mm for f in report.frames])),
        "mean_add_mm": float(np.mean([f.add_mm for f in report.frames])),
    }
    if report.timing_ms is not None:
        payload["timing_ms"] = report.timing_ms
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"

"""File formats: PPM/PGM/PFM images, pose trajectories, rig calibrations, and
the on-disk sequence layout.

Sequence directory layout:
    sequence/
        rig.json                 calibration (see save_rig)
        gt.poses                 ground-truth trajectory, world_from_template
        cam_<i>.poses            optional per-frame world_from_camera (moving rigs)
        view_<i>/frame_<k>.ppm   8-bit binary PPM images

Trajectory files are plain text, one frame per line: the frame index followed
by the row-major 3x3 rotation and the translation in mm (12 numbers), with #
comments allowed. Calibration JSON carries one object per camera with fields
fx, fy, cx, cy, width, height and object_from_camera as 16 row-major numbers
of the 4x4 transform mapping camera coordinates to the shared object frame.
"""

from __future__ import annotations

import json
import os
import warnings
from typing import Protocol

import numpy as np

from .camera import CameraIntrinsics, CameraView
from .geometry import RigidTransform
from .renderer import LevelSetField, SilhouetteMask

_FLOAT_FMT = "{:.17g}"


class FileFormatError(ValueError):
    """Malformed input file; the message carries path and line context."""


# ---------------------------------------------------------------- images

def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6, 8-bit RGB."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError("write_ppm expects (H, W, 3) uint8")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P6":
        raise FileFormatError(f"{path}: not a binary PPM (magic {fields[0]!r})")
    try:
        w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    except ValueError as exc:
        raise FileFormatError(f"{path}: bad PPM header") from exc
    if maxval != 255:
        raise FileFormatError(f"{path}: only maxval 255 supported")
    pos += 1  # single whitespace after maxval
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    if pixels.size != w * h * 3:
        raise FileFormatError(f"{path}: truncated pixel data")
    return pixels.reshape(h, w, 3).copy()


def write_pgm(path, mask: SilhouetteMask) -> None:
    """Binary P5 dump of a silhouette mask (foreground = 255)."""
    occ = mask.occupancy
    with open(path, "wb") as fh:
        fh.write(f"P5\n{occ.shape[1]} {occ.shape[0]}\n255\n".encode("ascii"))
        fh.write((occ.astype(np.uint8) * 255).tobytes())


def write_pfm(path, field) -> None:
    """Grayscale PFM ('Pf'), little-endian float32, rows stored top-to-bottom
    in row-major order (scale header -1.0 marks little-endian)."""
    phi = field.phi if isinstance(field, LevelSetField) else np.asarray(field, dtype=np.float32)
    phi = np.asarray(phi, dtype=np.float32)
    if phi.ndim != 2:
        raise ValueError("write_pfm expects a 2D field")
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{phi.shape[1]} {phi.shape[0]}\n-1.0\n".encode("ascii"))
        fh.write(phi.astype("<f4").tobytes())


# ---------------------------------------------------------------- trajectories

def save_trajectory(path, poses, indices=None) -> None:
    """One line per frame: index + 9 rotation entries (row-major) + translation."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# frame r11 r12 r13 r21 r22 r23 r31 r32 r33 tx ty tz\n")
        for k, pose in enumerate(poses):
            idx = k if indices is None else indices[k]
            nums = list(pose.rotation.reshape(9)) + list(pose.translation)
            fh.write(str(idx) + " " + " ".join(_FLOAT_FMT.format(v) for v in nums) + "\n")


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    """Polar decomposition: nearest rotation in the Frobenius sense."""
    u, _, vt = np.linalg.svd(R)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1.0
        out = u @ vt
    return out


def load_trajectory(path) -> list[tuple[int, RigidTransform]]:
    """Frame-indexed poses; indices must be strictly increasing.

    Rotations off orthonormal by more than 1e-6 are rejected; smaller drift is
    re-orthonormalized through the polar decomposition with a warning.
    """
    out: list[tuple[int, RigidTransform]] = []
    last_idx = None
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 13:
                raise FileFormatError(
                    f"{path}:{lineno}: expected 13 fields (index + 12 numbers), got {len(parts)}"
                )
            try:
                idx = int(parts[0])
                nums = np.array([float(p) for p in parts[1:]])
            except ValueError as exc:
                raise FileFormatError(f"{path}:{lineno}: bad number") from exc
            if last_idx is not None and idx <= last_idx:
                raise FileFormatError(
                    f"{path}:{lineno}: frame indices must be strictly increasing"
                )
            last_idx = idx
            R = nums[:9].reshape(3, 3)
            err = float(np.max(np.abs(R.T @ R - np.eye(3))))
            if err > 1e-6:
                raise FileFormatError(
                    f"{path}:{lineno}: rotation off orthonormal by {err:.3g} (> 1e-6)"
                )
            if err > 1e-9:
                warnings.warn(
                    f"{path}:{lineno}: re-orthonormalized rotation (drift {err:.3g})",
                    stacklevel=2,
                )
            out.append((idx, RigidTransform(_orthonormalize(R), nums[9:])))
    if not out:
        raise FileFormatError(f"{path}: empty trajectory")
    return out


# ---------------------------------------------------------------- calibration

def save_rig(path, views) -> None:
    cams = []
    for v in views:
        k = v.intrinsics
        cams.append(
            {
                "fx": k.fx,
                "fy": k.fy,
                "cx": k.cx,
                "cy": k.cy,
                "width": k.width,
                "height": k.height,
                "object_from_camera": [float(x) for x in v.object_from_camera.matrix().reshape(16)],
            }
        )
    with open(path, "w", encoding="ascii") as fh:
        json.dump({"cameras": cams}, fh, indent=2, sort_keys=True)
        fh.write("\n")


_RIG_FIELDS = ("fx", "fy", "cx", "cy", "width", "height", "object_from_camera")


def load_rig(path) -> list[CameraView]:
    """Strict loader: every field required, nothing silently defaulted."""
    with open(path, "r", encoding="ascii") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(payload, dict) or "cameras" not in payload:
        raise FileFormatError(f"{path}: missing top-level 'cameras' list")
    views = []
    for i, cam in enumerate(payload["cameras"]):
        for name in _RIG_FIELDS:
            if name not in cam:
                raise FileFormatError(f"{path}: camera {i} missing field '{name}'")
        m = np.array(cam["object_from_camera"], dtype=float)
        if m.size != 16:
            raise FileFormatError(
                f"{path}: camera {i} object_from_camera needs 16 numbers, got {m.size}"
            )
        intr = CameraIntrinsics(
            fx=float(cam["fx"]),
            fy=float(cam["fy"]),
            cx=float(cam["cx"]),
            cy=float(cam["cy"]),
            width=int(cam["width"]),
            height=int(cam["height"]),
        )
        views.append(CameraView(intr, RigidTransform.from_matrix(m.reshape(4, 4)), index=i))
    if not views:
        raise FileFormatError(f"{path}: no cameras")
    return views


# ---------------------------------------------------------------- sequences

def save_sequence(directory, sequence) -> None:
    """Write a synthetic sequence as a self-describing directory."""
    os.makedirs(directory, exist_ok=True)
    save_rig(os.path.join(directory, "rig.json"), sequence.views)
    save_trajectory(os.path.join(directory, "gt.poses"), sequence.gt_poses)
    if sequence.camera_poses is not None:
        for i in range(len(sequence.views)):
            save_trajectory(
                os.path.join(directory, f"cam_{i}.poses"),
                [frame[i] for frame in sequence.camera_poses],
            )
    for i in range(len(sequence.views)):
        vdir = os.path.join(directory, f"view_{i}")
        os.makedirs(vdir, exist_ok=True)
        for k, frame in enumerate(sequence.images):
            write_ppm(os.path.join(vdir, f"frame_{k:05d}.ppm"), frame[i])


class SequenceDir:
    """Reader for the directory layout written by save_sequence."""

    def __init__(self, directory):
        self.directory = str(directory)
        rig_path = os.path.join(self.directory, "rig.json")
        if not os.path.exists(rig_path):
            raise FileFormatError(f"{rig_path}: missing rig calibration")
        self.views = load_rig(rig_path)
        gt_path = os.path.join(self.directory, "gt.poses")
        self.gt_poses = None
        if os.path.exists(gt_path):
            self.gt_poses = [p for _, p in load_trajectory(gt_path)]
        self.camera_poses = None
        cam_files = [
            os.path.join(self.directory, f"cam_{i}.poses") for i in range(len(self.views))
        ]
        if all(os.path.exists(p) for p in cam_files):
            per_view = [[p for _, p in load_trajectory(f)] for f in cam_files]
            self.camera_poses = [list(frame) for frame in zip(*per_view)]
        self.frame_count = self._count_frames()

    def _count_frames(self) -> int:
        vdir = os.path.join(self.directory, "view_0")
        if not os.path.isdir(vdir):
            raise FileFormatError(f"{vdir}: missing view_0 image directory")
        return len([f for f in os.listdir(vdir) if f.endswith(".ppm")])

    def frame(self, k: int) -> list[np.ndarray]:
        return [
            read_ppm(os.path.join(self.directory, f"view_{i}", f"frame_{k:05d}.ppm"))
            for i in range(len(self.views))
        ]

    def frames(self):
        for k in range(self.frame_count):
            yield self.frame(k)


# ---------------------------------------------------------------- adapters

class DatasetAdapter(Protocol):
    """Interface for mapping external benchmark layouts onto this package.

    Implementations translate whatever pose/calibration format a released
    dataset uses into the trajectory and CameraView conventions above. Only
    the interface is fixed here; concrete adapters register themselves under
    a format name.
    """

    def load_trajectory(self, path) -> list[tuple[int, RigidTransform]]: ...

    def load_rig(self, path) -> list[CameraView]: ...


ADAPTERS: dict[str, DatasetAdapter] = {}


def register_adapter(name: str, adapter: DatasetAdapter) -> None:
    ADAPTERS[name] = adapter

"""Synthetic multi-view experiments: plane/cone camera rigs around a desk-scale
object, seeded smooth motion in three modes, solid-color image synthesis, and
error sweeps over camera included angle and image resolution.

World frame = the object-centered frame of frame 0: the model bbox center
starts at the origin with template axes, and camera C-0 sits on the -Z axis
looking at it. Per-axis errors are reported in C-0 camera coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .camera import CameraIntrinsics, CameraView
from .energy import EnergyConfig
from .geometry import RigidTransform, Twist, compose, exp_se3, invert
from .mesh import TriangleMesh
from .metrics import rotation_error
from .solver import SolverConfig, track_sequence

DEFAULT_INTRINSICS = CameraIntrinsics(
    fx=550.0, fy=550.0, cx=319.5, cy=239.5, width=640, height=480
)
DEFAULT_FG_COLOR = (205, 62, 52)
DEFAULT_BG_COLOR = (38, 88, 170)

MOTION_MODES = ("free_move", "rotate_only", "cameras_move")
RIG_PATTERNS = ("plane", "cone")


class InvalidAngleError(ValueError):
    """Rig angles outside (0, 180) degrees, or an unreachable cone elevation."""


@dataclass(frozen=True)
class RigSpec:
    pattern: str = "plane"
    included_angles_deg: tuple = (90.0,)
    standoff_mm: float = 700.0
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS
    elevation_deg: float | None = None  # cone rigs; None = half the included angle

    def __post_init__(self):
        if self.pattern not in RIG_PATTERNS:
            raise InvalidAngleError(f"unknown rig pattern {self.pattern!r}")
        for a in self.included_angles_deg:
            if not (0.0 < a < 180.0):
                raise InvalidAngleError(f"included angle {a} outside (0, 180)")
        if self.standoff_mm <= 0:
            raise ValueError("standoff must be positive")


@dataclass(frozen=True)
class MotionSpec:
    mode: str = "free_move"
    frames: int = 120
    translation_step_mm: float = 1.5  # max per-frame translation delta
    rotation_step_deg: float = 0.8    # max per-frame rotation delta
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MOTION_MODES:
            raise ValueError(f"unknown motion mode {self.mode!r}")
        if self.frames < 1:
            raise ValueError("need at least one frame")
        if self.translation_step_mm < 0 or self.rotation_step_deg < 0:
            raise ValueError("step amplitudes must be non-negative")


@dataclass
class SyntheticSequence:
    gt_poses: list                 # world_from_template per frame
    images: list                   # [frame][view] uint8 (H, W, 3)
    views: list                    # rig at frame 0 (object_from_camera = world_from_camera)
    camera_poses: list | None      # per-frame world_from_camera lists (cameras_move only)
    mesh: TriangleMesh


def _textured_background(rng: np.random.Generator, height: int, width: int, fg, bg) -> np.ndarray:
    """Static cluttered backdrop: smooth random color waves around the base
    background color, with excursions toward the foreground hue so the color
    models overlap the way real scenes do."""
    ys = np.arange(height, dtype=float)[:, None]
    xs = np.arange(width, dtype=float)[None, :]
    img = np.empty((height, width, 3))
    fg = np.asarray(fg, dtype=float)
    bg = np.asarray(bg, dtype=float)
    mix = np.zeros((height, width))
    for _ in range(4):
        fx = rng.uniform(0.5, 6.0) / width
        fy = rng.uniform(0.5, 6.0) / width
        phase = rng.uniform(0.0, 2.0 * np.pi)
        mix += rng.uniform(0.15, 0.45) * np.sin(2.0 * np.pi * (fx * xs + fy * ys) + phase)
    # clutter patches come close to the foreground color without reaching it
    mix = np.clip(0.5 + mix, 0.0, 0.92)
    for c in range(3):
        wave = 18.0 * np.sin(2.0 * np.pi * rng.uniform(1.0, 4.0) * xs / width + rng.uniform(0, 6.28))
        img[:, :, c] = bg[c] + mix * (fg[c] - bg[c]) + wave
    return img


def _look_at(position, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> RigidTransform:
    """camera_from_world transform for a camera at position looking at target."""
    p = np.asarray(position, dtype=float)
    f = np.asarray(target, dtype=float) - p
    f = f / np.linalg.norm(f)
    u = np.asarray(up, dtype=float)
    x = np.cross(u, f)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(np.array([1.0, 0.0, 0.0]), f)
    x = x / np.linalg.norm(x)
    y = np.cross(f, x)
    world_from_cam = np.stack([x, y, f], axis=1)
    r = world_from_cam.T
    return RigidTransform(r, -r @ p)


def make_rig(spec: RigSpec) -> list[CameraView]:
    """Cameras at the configured included angles relative to C-0.

    C-0 sits at standoff on the world -Z axis looking at the origin. Plane
    rigs keep every optical center in the XZ plane with the object; cone rigs
    lift the extra cameras out of plane by the elevation angle while keeping
    the included angle to C-0 exact.
    """
    directions = [np.array([0.0, 0.0, -1.0])]
    for a in spec.included_angles_deg:
        th = np.radians(a)
        if spec.pattern == "plane":
            directions.append(np.array([np.sin(th), 0.0, -np.cos(th)]))
        else:
            elev = 0.5 * a if spec.elevation_deg is None else spec.elevation_deg
            e = np.radians(elev)
            if not (0.0 <= elev < 90.0) or np.sin(e) > np.sin(th):
                raise InvalidAngleError(
                    f"cone elevation {elev} unreachable for included angle {a}"
                )
            ux = np.sqrt(max(np.sin(th) ** 2 - np.sin(e) ** 2, 0.0))
            directions.append(np.array([ux, np.sin(e), -np.cos(th)]))
    views = []
    for i, u in enumerate(directions):
        cam_from_world = _look_at(spec.standoff_mm * u)
        views.append(CameraView(spec.intrinsics, invert(cam_from_world), index=i))
    return views


def _fourier_path(rng: np.random.Generator, frames: int, step: float, harmonics: int = 3) -> np.ndarray:
    """Smooth bounded random path with per-frame deltas scaled to <= step.

    The random draws happen regardless of step so the trajectory shape is a
    function of the seed alone.
    """
    t = np.arange(frames, dtype=float)
    path = np.zeros((frames, 3))
    for axis in range(3):
        for _ in range(harmonics):
            amp = rng.uniform(0.5, 1.0)
            cycles = rng.uniform(0.6, 2.2)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            path[:, axis] += amp * np.sin(2.0 * np.pi * cycles * t / max(frames, 2) + phase)
    path -= path[0]
    if step <= 0.0 or frames < 2:
        return np.zeros((frames, 3))
    dmax = float(np.max(np.linalg.norm(np.diff(path, axis=0), axis=1)))
    if dmax > 0.0:
        path *= step / dmax
    return path


def _rotation_about(rotvec: np.ndarray) -> RigidTransform:
    return exp_se3(Twist(np.zeros(3), rotvec))


def generate_sequence(
    mesh: TriangleMesh,
    rig,
    motion: MotionSpec,
    noise_sigma: float = 0.0,
    fg_color=DEFAULT_FG_COLOR,
    bg_color=DEFAULT_BG_COLOR,
    edge_supersample: int = 1,
    textured_background: bool = False,
) -> SyntheticSequence:
    """Render a ground-truth sequence for the rig under the motion spec.

    The foreground is a solid color over either a solid or a cluttered static
    background, with optional additive Gaussian noise; everything is a
    deterministic function of the motion seed and the configuration.
    edge_supersample > 1 renders coverage at that multiple of the resolution
    and box-filters it down, giving anti-aliased edge pixels the way a real
    sensor integrates over its footprint.
    """
    from .renderer import render  # local import keeps module import cheap

    views = list(rig)
    rng = np.random.default_rng(motion.seed)
    rot_step = np.radians(motion.rotation_step_deg)

    obj_trans = _fourier_path(rng, motion.frames, motion.translation_step_mm)
    obj_rotv = _fourier_path(rng, motion.frames, rot_step)
    rig_trans = _fourier_path(rng, motion.frames, motion.translation_step_mm)
    rig_rotv = _fourier_path(rng, motion.frames, rot_step)

    if motion.mode == "rotate_only":
        obj_trans[:] = 0.0
    if motion.mode == "cameras_move":
        obj_trans[:] = 0.0
        obj_rotv[:] = 0.0
    else:
        rig_trans[:] = 0.0
        rig_rotv[:] = 0.0

    center = mesh.bbox_center
    gt_poses = []
    for k in range(motion.frames):
        r = _rotation_about(obj_rotv[k])
        gt_poses.append(RigidTransform(r.rotation, obj_trans[k] - r.rotation @ center))

    camera_poses = None
    if motion.mode == "cameras_move":
        camera_poses = []
        for k in range(motion.frames):
            g = RigidTransform(_rotation_about(rig_rotv[k]).rotation, rig_trans[k])
            camera_poses.append([compose(g, v.object_from_camera) for v in views])

    if edge_supersample < 1:
        raise ValueError("edge_supersample must be at least 1")
    fg = np.array(fg_color, dtype=float)
    bg = np.array(bg_color, dtype=float)
    ss = int(edge_supersample)
    backdrops = None
    if textured_background:
        backdrops = [
            _textured_background(rng, v.intrinsics.height, v.intrinsics.width, fg, bg)
            for v in views
        ]
    images = []
    for k in range(motion.frames):
        frame = []
        for i, view in enumerate(views):
            world_from_cam = camera_poses[k][i] if camera_poses is not None else view.object_from_camera
            cam = replace(view, object_from_camera=world_from_cam)
            if ss == 1:
                rr = render(mesh, cam, gt_poses[k])
                alpha = rr.mask.occupancy.astype(float)
            else:
                k0 = cam.intrinsics
                # principal point shifted so each ss x ss block is exactly one
                # output pixel's footprint (centers at integer coordinates)
                hi_intr = CameraIntrinsics(
                    fx=k0.fx * ss,
                    fy=k0.fy * ss,
                    cx=k0.cx * ss + (ss - 1) / 2.0,
                    cy=k0.cy * ss + (ss - 1) / 2.0,
                    width=k0.width * ss,
                    height=k0.height * ss,
                )
                occ = render(mesh, replace(cam, intrinsics=hi_intr), gt_poses[k]).mask.occupancy
                h, w = k0.height, k0.width
                alpha = occ.reshape(h, ss, w, ss).mean(axis=(1, 3))
            base = backdrops[i] if backdrops is not None else bg[None, None, :]
            img = base + alpha[:, :, None] * (fg[None, None, :] - base)
            if noise_sigma > 0.0:
                img += rng.normal(0.0, noise_sigma, size=img.shape)
            frame.append(np.clip(np.round(img), 0, 255).astype(np.uint8))
        images.append(frame)
    return SyntheticSequence(gt_poses, images, views, camera_poses, mesh)


@dataclass(frozen=True)
class SweepConfig:
    rig: RigSpec = RigSpec()
    energy: EnergyConfig = EnergyConfig()
    solver: SolverConfig = SolverConfig()
    noise_sigma: float = 0.0
    textured_background: bool = False
    reset_rotation_deg: float = 5.0
    reset_translation_mm: float = 50.0


@dataclass
class ErrorTable:
    """Sweep results: one column per configuration, rows r/tx/ty/tz/lost."""

    title: str
    header_name: str
    config_labels: list
    camera_labels: list
    rows: dict

    def to_csv(self) -> str:
        lines = [f"# {self.title}"]
        lines.append(self.header_name + "," + ",".join(self.config_labels))
        lines.append("camera_index," + ",".join(self.camera_labels))
        for name, values in self.rows.items():
            cells = ",".join("nan" if v is None or np.isnan(v) else f"{v:.9g}" for v in values)
            lines.append(f"{name},{cells}")
        return "\n".join(lines) + "\n"


ROW_LABELS = ("r(deg)", "tx(mm)", "ty(mm)", "tz(mm)", "lost_number")


def _sequence_errors(predicted, gt_poses, c0_rotations):
    """Per-frame rotation error (deg) and |per-axis| translation error in C-0."""
    rot = np.empty(len(predicted))
    axes = np.empty((len(predicted), 3))
    for k, (ph, pg) in enumerate(zip(predicted, gt_poses)):
        rot[k] = rotation_error(ph.rotation, pg.rotation)
        axes[k] = np.abs(c0_rotations[k] @ (ph.translation - pg.translation))
    return rot, axes


def _track_cell(mesh, views, motion, cfg: SweepConfig):
    seq = generate_sequence(
        mesh, views, motion, cfg.noise_sigma, textured_background=cfg.textured_background
    )
    result = track_sequence(
        seq.gt_poses[0],
        seq.images,
        seq.views,
        mesh,
        cfg.energy,
        cfg.solver,
        gt_poses=seq.gt_poses,
        camera_poses=seq.camera_poses,
        reset_rotation_deg=cfg.reset_rotation_deg,
        reset_translation_mm=cfg.reset_translation_mm,
    )
    if seq.camera_poses is not None:
        c0 = [invert(poses[0]).rotation for poses in seq.camera_poses]
    else:
        c0 = [invert(views[0].object_from_camera).rotation] * motion.frames
    rot, axes = _sequence_errors(result.predicted, seq.gt_poses, c0)
    return rot, axes, len(result.resets)


def default_suite():
    """The desk-scale synthetic benchmark suite this package ships with.

    Four procedural shapes (90-230 mm), free 6DOF motion near hand speed, a
    cluttered static backdrop plus mild sensor noise, cameras 900 mm out at
    512 px width. Returns (meshes, motion, sweep_config).
    """
    from .mesh import default_suite_meshes

    meshes = default_suite_meshes()
    motion = MotionSpec(
        mode="free_move",
        frames=120,
        translation_step_mm=5.0,
        rotation_step_deg=2.5,
        seed=5,
    )
    cfg = SweepConfig(
        rig=RigSpec(standoff_mm=900.0, intrinsics=DEFAULT_INTRINSICS.scaled(512)),
        noise_sigma=6.0,
        textured_background=True,
    )
    return meshes, motion, cfg


def run_angle_sweep(meshes, angles_deg, motion: MotionSpec, cfg: SweepConfig = SweepConfig()) -> ErrorTable:
    """Monocular baseline plus one binocular configuration per included angle.

    Cell errors are averaged over frames and over all meshes; Lost Number sums
    the reset events. A failing cell leaves NaN in its column rather than
    aborting the sweep.
    """
    mesh_list = list(meshes.values()) if isinstance(meshes, dict) else list(meshes)
    configs = [("Mono.", "C-0", None)]
    for j, a in enumerate(angles_deg):
        configs.append((f"{a:g}", f"C-0/C-{j + 1}", float(a)))

    labels, cameras = [], []
    table = {name: [] for name in ROW_LABELS}
    for label, camera, angle in configs:
        labels.append(label)
        cameras.append(camera)
        rots, axes, lost = [], [], 0
        failed = False
        for mesh in mesh_list:
            try:
                spec = replace(
                    cfg.rig, included_angles_deg=() if angle is None else (angle,)
                )
                views = make_rig(spec)
                rot, ax, nlost = _track_cell(mesh, views, motion, cfg)
                rots.append(rot)
                axes.append(ax)
                lost += nlost
            except Exception:
                failed = True
        if failed or not rots:
            for name in ROW_LABELS:
                table[name].append(np.nan)
            continue
        rot = np.concatenate(rots)
        ax = np.vstack(axes)
        table["r(deg)"].append(float(rot.mean()))
        table["tx(mm)"].append(float(ax[:, 0].mean()))
        table["ty(mm)"].append(float(ax[:, 1].mean()))
        table["tz(mm)"].append(float(ax[:, 2].mean()))
        table["lost_number"].append(float(lost))
    return ErrorTable(
        title=f"binocular tracking vs camera included angle ({motion.mode})",
        header_name="included_angle",
        config_labels=labels,
        camera_labels=cameras,
        rows=table,
    )


def run_resolution_sweep(
    mesh: TriangleMesh,
    widths,
    motion: MotionSpec,
    cfg: SweepConfig = SweepConfig(),
    included_angle_deg: float = 90.0,
) -> ErrorTable:
    """Binocular rig at one included angle tracked across image widths (4:3)."""
    widths = list(widths)
    if any(b <= a for a, b in zip(widths, widths[1:])):
        raise ValueError("widths must be ascending")
    labels = [str(int(w)) for w in widths]
    table = {name: [] for name in ROW_LABELS}
    for w in widths:
        try:
            spec = replace(
                cfg.rig,
                included_angles_deg=(included_angle_deg,),
                intrinsics=cfg.rig.intrinsics.scaled(int(w)),
            )
            views = make_rig(spec)
            rot, ax, nlost = _track_cell(mesh, views, motion, cfg)
            table["r(deg)"].append(float(rot.mean()))
            table["tx(mm)"].append(float(ax[:, 0].mean()))
            table["ty(mm)"].append(float(ax[:, 1].mean()))
            table["tz(mm)"].append(float(ax[:, 2].mean()))
            table["lost_number"].append(float(nlost))
        except Exception:
            for name in ROW_LABELS:
                table[name].append(np.nan)
    return ErrorTable(
        title=f"binocular tracking vs resolution ({included_angle_deg:g} deg rig)",
        header_name="resolution_width",
        config_labels=labels,
        camera_labels=["C-0/C-1"] * len(widths),
        rows=table,
    )

"""Command-line harness: simulate, track, evaluate, sweep.

Exit codes: 0 success, 1 configuration/file error, 2 runtime tracking failure.
Flags can be overridden by environment variables with the MVTRACK_ prefix
(MVTRACK_SEED, MVTRACK_OUT, MVTRACK_VIEWS, MVTRACK_ROUNDS, MVTRACK_ITERS,
MVTRACK_BAND, MVTRACK_STRIDE, MVTRACK_PATTERN).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import io as mio
from .camera import CameraIntrinsics
from .energy import EnergyConfig
from .geometry import RigidTransform, compose, invert
from .mesh import MESH_FACTORIES, TriangleMesh, default_suite_meshes, load_obj, save_obj
from .metrics import (
    MetricThresholds,
    report_to_csv,
    report_to_json,
    score_sequence,
)
from .simulator import (
    MotionSpec,
    RigSpec,
    SweepConfig,
    generate_sequence,
    make_rig,
    run_angle_sweep,
    run_resolution_sweep,
)
from .solver import SolverConfig, track_sequence


class ConfigError(ValueError):
    """Bad configuration file or command-line arguments."""


class TrackingError(RuntimeError):
    """Tracking could not produce a usable result."""


@dataclasses.dataclass(frozen=True)
class MeshSpec:
    kind: str | None = "bump_sphere"
    size_mm: float | None = None
    path: str | None = None

    def load(self) -> TriangleMesh:
        if self.path is not None:
            if not os.path.exists(self.path):
                raise ConfigError(f"mesh.path: {self.path!r} does not exist")
            return load_obj(self.path)
        if self.kind not in MESH_FACTORIES:
            raise ConfigError(
                f"unknown mesh kind {self.kind!r}; choices: {sorted(MESH_FACTORIES)}"
            )
        factory = MESH_FACTORIES[self.kind]
        return factory(self.size_mm) if self.size_mm else factory()


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    mesh: MeshSpec = MeshSpec()
    rig: RigSpec = RigSpec()
    motion: MotionSpec = MotionSpec()
    energy: EnergyConfig = EnergyConfig()
    solver: SolverConfig = SolverConfig()
    noise_sigma: float = 0.0
    textured_background: bool = False
    sweep_angles_deg: tuple = (10.0, 30.0, 90.0)
    sweep_widths: tuple = (320, 640, 1280)
    use_mesh_suite: bool = True
    out: str | None = None


_SECTION_TYPES = {
    "mesh": MeshSpec,
    "rig": RigSpec,
    "motion": MotionSpec,
    "energy": EnergyConfig,
    "solver": SolverConfig,
}
_SCALAR_KEYS = {
    "noise_sigma",
    "textured_background",
    "sweep_angles_deg",
    "sweep_widths",
    "use_mesh_suite",
    "out",
}


def _build_section(cls, payload: dict, section: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in payload.items():
        if key == "intrinsics" and cls is RigSpec:
            if not isinstance(value, dict):
                raise ConfigError("rig.intrinsics must be an object")
            try:
                kwargs["intrinsics"] = CameraIntrinsics(**value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"rig.intrinsics: {exc}") from exc
            continue
        if key not in fields:
            raise ConfigError(f"unknown key {section}.{key}")
        kwargs[key] = tuple(value) if isinstance(value, list) else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def config_from_dict(payload: dict) -> ExperimentConfig:
    if not isinstance(payload, dict):
        raise ConfigError("config root must be a JSON object")
    kwargs = {}
    for key, value in payload.items():
        if key in _SECTION_TYPES:
            if not isinstance(value, dict):
                raise ConfigError(f"section {key!r} must be an object")
            kwargs[key] = _build_section(_SECTION_TYPES[key], value, key)
        elif key in _SCALAR_KEYS:
            kwargs[key] = tuple(value) if isinstance(value, list) else value
        else:
            raise ConfigError(f"unknown top-level key {key!r}")
    return ExperimentConfig(**kwargs)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out: dict = {}
    for name, cls in _SECTION_TYPES.items():
        section = dataclasses.asdict(getattr(cfg, name))
        if name == "rig":
            section["included_angles_deg"] = list(section["included_angles_deg"])
        for k, v in list(section.items()):
            if isinstance(v, tuple):
                section[k] = list(v)
        out[name] = section
    out["noise_sigma"] = cfg.noise_sigma
    out["textured_background"] = cfg.textured_background
    out["sweep_angles_deg"] = list(cfg.sweep_angles_deg)
    out["sweep_widths"] = list(cfg.sweep_widths)
    out["use_mesh_suite"] = cfg.use_mesh_suite
    out["out"] = cfg.out
    return out


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(payload)


def _env(name: str, cast, default):
    raw = os.environ.get(f"MVTRACK_{name}")
    if raw is None:
        return default
    try:
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"MVTRACK_{name}={raw!r}: {exc}") from exc


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    motion = cfg.motion
    seed = _env("SEED", int, args.seed)
    if seed is not None:
        motion = dataclasses.replace(motion, seed=seed)
    solver = cfg.solver
    rounds = _env("ROUNDS", int, getattr(args, "rounds", None))
    iters = _env("ITERS", int, getattr(args, "iters", None))
    if rounds is not None:
        solver = dataclasses.replace(solver, rounds=rounds)
    if iters is not None:
        solver = dataclasses.replace(solver, iterations_per_round=iters)
    energy = cfg.energy
    band = _env("BAND", float, getattr(args, "band", None))
    stride = _env("STRIDE", int, getattr(args, "stride", None))
    if band is not None:
        energy = dataclasses.replace(energy, band_halfwidth=band)
    if stride is not None:
        energy = dataclasses.replace(energy, sample_stride=stride)
    rig = cfg.rig
    pattern = _env("PATTERN", str, getattr(args, "pattern", None))
    if pattern is not None:
        rig = dataclasses.replace(rig, pattern=pattern)
    out = _env("OUT", str, args.out) or cfg.out
    return dataclasses.replace(
        cfg, motion=motion, solver=solver, energy=energy, rig=rig, out=out
    )


def _require_out(cfg: ExperimentConfig, what: str) -> str:
    if not cfg.out:
        raise ConfigError(f"{what} needs an output directory (--out or config 'out')")
    os.makedirs(cfg.out, exist_ok=True)
    return cfg.out


# ---------------------------------------------------------------- simulate

def cmd_simulate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = _require_out(cfg, "simulate")
    mesh = cfg.mesh.load()
    views = make_rig(cfg.rig)
    seq = generate_sequence(
        mesh, views, cfg.motion, cfg.noise_sigma,
        textured_background=cfg.textured_background,
    )
    mio.save_sequence(out, seq)
    save_obj(os.path.join(out, "mesh.obj"), mesh)
    print(f"wrote {cfg.motion.frames} frames x {len(views)} views to {out}")
    return 0


# ---------------------------------------------------------------- track

def _parse_views(spec: str, n: int) -> list[int]:
    try:
        idx = [int(p) for p in spec.split(",") if p != ""]
    except ValueError as exc:
        raise ConfigError(f"--views {spec!r}: {exc}") from exc
    if not idx or any(i < 0 or i >= n for i in idx):
        raise ConfigError(f"--views {spec!r}: sequence has {n} views")
    return idx


def _load_mesh_for(args, seq_dir: str, cfg: ExperimentConfig | None) -> TriangleMesh:
    if getattr(args, "mesh", None):
        if os.path.exists(args.mesh):
            return load_obj(args.mesh)
        return MeshSpec(kind=args.mesh).load()
    bundled = os.path.join(seq_dir, "mesh.obj")
    if os.path.exists(bundled):
        return load_obj(bundled)
    if cfg is not None:
        return cfg.mesh.load()
    raise ConfigError("no mesh: pass --mesh, bundle mesh.obj, or set config mesh")


def _save_checkpoint(path, frame_index: int, pose: RigidTransform, models) -> None:
    arrays = {
        "frame_index": np.array(frame_index, dtype=np.int64),
        "pose": pose.matrix(),
        "n_views": np.array(len(models), dtype=np.int64),
    }
    for i, model in enumerate(models):
        if model is not None:
            arrays[f"fg_{i}"] = model.fg_hist
            arrays[f"bg_{i}"] = model.bg_hist
            arrays[f"bins_{i}"] = np.array(model.bins, dtype=np.int64)
    np.savez(path, **arrays)


def _load_checkpoint(path):
    from .energy import ColorModel

    with np.load(path) as data:
        frame_index = int(data["frame_index"])
        pose = RigidTransform.from_matrix(data["pose"])
        n = int(data["n_views"])
        models = []
        for i in range(n):
            if f"fg_{i}" in data:
                models.append(
                    ColorModel(data[f"fg_{i}"].copy(), data[f"bg_{i}"].copy(), int(data[f"bins_{i}"]))
                )
            else:
                models.append(None)
    return frame_index, pose, models


def cmd_track(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = _apply_overrides(cfg, args)
    out = _require_out(cfg, "track")
    seq = mio.SequenceDir(args.sequence)
    mesh = _load_mesh_for(args, args.sequence, cfg)

    indices = list(range(len(seq.views)))
    if args.mono:
        indices = [0]
    elif args.views:
        indices = _parse_views(args.views, len(seq.views))
    views = [seq.views[i] for i in indices]

    start = args.start_frame
    initial_models = None
    if args.resume:
        start, initial_pose, initial_models = _load_checkpoint(args.resume)
    elif args.init_pose:
        initial_pose = mio.load_trajectory(args.init_pose)[0][1]
    elif seq.gt_poses is not None:
        initial_pose = seq.gt_poses[start]
    else:
        raise ConfigError(
            "sequence has no gt.poses; pass --init-pose or resume from a checkpoint"
        )

    if start >= seq.frame_count:
        raise ConfigError(
            f"start frame {start} is beyond the sequence ({seq.frame_count} frames)"
        )
    frames = [[seq.frame(k)[i] for i in indices] for k in range(start, seq.frame_count)]
    gt = seq.gt_poses[start:] if seq.gt_poses is not None else None
    camera_poses = None
    if seq.camera_poses is not None:
        camera_poses = [[seq.camera_poses[k][i] for i in indices] for k in range(start, seq.frame_count)]

    t0 = time.perf_counter()
    result = track_sequence(
        initial_pose,
        frames,
        views,
        mesh,
        cfg.energy,
        cfg.solver,
        gt_poses=gt,
        camera_poses=camera_poses,
        initial_models=initial_models,
    )
    elapsed_ms = 1000.0 * (time.perf_counter() - t0)

    idx = list(range(start, seq.frame_count))
    mio.save_trajectory(os.path.join(out, "pred.poses"), result.predicted, idx)
    for j, i in enumerate(indices):
        per_view = []
        for k, pose in enumerate(result.predicted):
            wfc = camera_poses[k][j] if camera_poses is not None else views[j].object_from_camera
            per_view.append(compose(invert(wfc), pose))
        mio.save_trajectory(os.path.join(out, f"pred_view_{i}.poses"), per_view, idx)
    reports = [
        {
            "frame": idx[k],
            "lost": r.lost,
            "lost_reason": r.lost_reason,
            "converged": r.converged,
            "used_samples": r.used_samples,
            "skipped_behind": r.skipped_behind,
            "skipped_border": r.skipped_border,
            "energy_trace": r.energy_trace,
        }
        for k, r in enumerate(result.reports)
    ]
    with open(os.path.join(out, "frame_reports.json"), "w", encoding="ascii") as fh:
        json.dump({"elapsed_ms": elapsed_ms, "resets": result.resets, "frames": reports}, fh, indent=2)
        fh.write("\n")
    if args.checkpoint_out:
        _save_checkpoint(args.checkpoint_out, seq.frame_count, result.final_pose, result.final_models)
    lost = sum(1 for r in result.reports if r.lost)
    print(f"tracked {len(frames)} frames ({lost} lost, {len(result.resets)} resets) -> {out}")
    if lost == len(frames):
        raise TrackingError("every frame was lost")
    return 0


# ---------------------------------------------------------------- evaluate

def write_add_curve_svg(path, report, samples: int = 101) -> None:
    """Self-contained SVG of the ADD success curve over thresholds 0..0.2d."""
    d = report.bbox_diameter_mm
    ramp = 0.2 * d
    add = np.array([f.add_mm for f in report.frames])
    width, height, margin = 480, 320, 45
    xs = np.linspace(0.0, ramp, samples)
    ys = [float(np.mean(add <= x)) for x in xs]

    def px(x):
        return margin + (width - 2 * margin) * (x / ramp if ramp > 0 else 0.0)

    def py(y):
        return height - margin - (height - 2 * margin) * y

    pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<polyline points="{pts}" fill="none" stroke="#c03030" stroke-width="2"/>',
        f'<text x="{width / 2:.0f}" y="{height - 10}" text-anchor="middle" font-size="12">ADD threshold (units of d, 0 to 0.2)</text>',
        f'<text x="14" y="{height / 2:.0f}" font-size="12" transform="rotate(-90 14 {height / 2:.0f})" text-anchor="middle">success rate</text>',
        f'<text x="{width - margin}" y="{margin - 8}" text-anchor="end" font-size="12">AUC = {report.auc:.4f}</text>',
        "</svg>",
    ]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(parts) + "\n")


def cmd_evaluate(args) -> int:
    pred = [p for _, p in mio.load_trajectory(args.pred)]
    gt = [p for _, p in mio.load_trajectory(args.gt)]
    if len(pred) != len(gt):
        raise ConfigError(f"frame count mismatch: {len(pred)} predictions vs {len(gt)} ground truth")
    mesh = load_obj(args.mesh) if os.path.exists(args.mesh) else MeshSpec(kind=args.mesh).load()
    reference = None
    if args.rig:
        views = mio.load_rig(args.rig)
        reference = invert(views[0].object_from_camera).rotation
    report = score_sequence(pred, gt, mesh, MetricThresholds(), reference)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "report.csv"), "w", encoding="ascii") as fh:
        fh.write(report_to_csv(report))
    with open(os.path.join(out, "summary.json"), "w", encoding="ascii") as fh:
        fh.write(report_to_json(report))
    if args.svg:
        write_add_curve_svg(os.path.join(out, "add_curve.svg"), report)
    keys = ["ADD-0.02d", "ADD-0.05d", "ADD-0.1d", "5deg_5cm", "2deg_2cm"]
    summary = " ".join(f"{k}={report.success[k]:.1f}" for k in keys if k in report.success)
    print(f"{summary} resets={len(report.resets)} auc={report.auc:.4f} -> {out}")
    return 0


# ---------------------------------------------------------------- sweep

def cmd_sweep(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = _require_out(cfg, "sweep")
    sweep_cfg = SweepConfig(
        rig=cfg.rig,
        energy=cfg.energy,
        solver=cfg.solver,
        noise_sigma=cfg.noise_sigma,
        textured_background=cfg.textured_background,
    )
    meshes = default_suite_meshes() if cfg.use_mesh_suite else {"mesh": cfg.mesh.load()}
    wrote = []
    if args.table in ("angle", "both"):
        table = run_angle_sweep(meshes, cfg.sweep_angles_deg, cfg.motion, sweep_cfg)
        path = os.path.join(out, "angle_sweep.csv")
        with open(path, "w", encoding="ascii") as fh:
            fh.write(table.to_csv())
        wrote.append(path)
    if args.table in ("resolution", "both"):
        mesh = next(iter(meshes.values()))
        table = run_resolution_sweep(mesh, cfg.sweep_widths, cfg.motion, sweep_cfg)
        path = os.path.join(out, "resolution_sweep.csv")
        with open(path, "w", encoding="ascii") as fh:
            fh.write(table.to_csv())
        wrote.append(path)
    print("wrote " + ", ".join(wrote))
    return 0


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvtrack",
        description="multi-view region-based 6DOF pose tracking harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a synthetic multi-view sequence")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--pattern", choices=("plane", "cone"), default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("track", help="track an on-disk sequence")
    p.add_argument("--sequence", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--mesh", default=None, help="OBJ path or procedural mesh kind")
    p.add_argument("--views", default=None, help="comma-separated view indices")
    p.add_argument("--mono", action="store_true", help="use view 0 only")
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--band", type=float, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--start-frame", type=int, default=0)
    p.add_argument("--init-pose", default=None,
                   help="trajectory file supplying the initial pose (first line)")
    p.add_argument("--resume", default=None, help="checkpoint .npz to resume from")
    p.add_argument("--checkpoint-out", default=None)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("evaluate", help="score a predicted trajectory against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--rig", default=None, help="rig.json for C-0 per-axis errors")
    p.add_argument("--out", default=None)
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="angle / resolution error sweeps")
    p.add_argument("--config", required=True)
    p.add_argument("--table", choices=("angle", "resolution", "both"), default="both")
    p.add_argument("--pattern", choices=("plane", "cone"), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, mio.FileFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrackingError as exc:
        print(f"tracking failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

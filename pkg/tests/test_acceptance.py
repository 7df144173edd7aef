"""Acceptance suite: one test per release criterion, each printing a verdict
line. The two sweep criteria run the shipped default suite end to end and are
the slow part of the test run (a few minutes each, budget 10 min per
criterion)."""

import json
import time
from dataclasses import replace

import numpy as np
import pytest

from mvtrack import cli
from mvtrack.camera import (
    full_pose_jacobian,
    pixel_to_spatial_error,
    project,
    projection_point_jacobian,
)
from mvtrack.energy import EnergyConfig, bilinear, build_observation, pixel_energy, pixel_gradient
from mvtrack.geometry import (
    RigidTransform,
    Twist,
    compose,
    exp_se3,
    invert,
    point_jacobian,
)
from mvtrack.mesh import make_box, make_torus_knot
from mvtrack.metrics import add_error, rotation_error, score_sequence
from mvtrack.renderer import render, signed_distance
from mvtrack.simulator import (
    MotionSpec,
    RigSpec,
    default_suite,
    generate_sequence,
    make_rig,
    run_angle_sweep,
    run_resolution_sweep,
)
from mvtrack.solver import (
    SolverConfig,
    joint_step,
    make_tracker_state,
    monocular_step,
    track_frame,
)

from conftest import random_rotation, random_transform
from test_camera import random_view
from test_metrics import quaternion_angle_oracle, rot_z


def ok(criterion, detail):
    print(f"[acceptance] criterion {criterion}: PASS ({detail})")


class TestCriterion1Jacobians:
    def test_jacobians_match_finite_differences(self, rng):
        t0 = time.perf_counter()

        for _ in range(100):  # point jacobian
            t = random_transform(rng, span_mm=100.0)
            x = rng.uniform(-100, 100, size=3)
            j = point_jacobian(t, x)
            p = t.apply(x)
            fd = np.zeros((3, 6))
            for k in range(6):
                e = np.zeros(6)
                e[k] = 1e-6
                fd[:, k] = (
                    exp_se3(Twist.from_vector(e)).apply(p)
                    - exp_se3(Twist.from_vector(-e)).apply(p)
                ) / 2e-6
            assert np.max(np.abs(j - fd) / np.maximum(np.abs(fd), 1.0)) < 1e-4

        for _ in range(100):  # projection point jacobian
            view = random_view(rng)
            x = rng.uniform(-100, 100, size=3)
            j = projection_point_jacobian(view, x)
            fd = np.zeros((2, 3))
            for k in range(3):
                d = np.zeros(3)
                d[k] = 1e-4
                fd[:, k] = (project(view, x + d) - project(view, x - d)) / 2e-4
            assert np.max(np.abs(j - fd) / np.maximum(np.abs(fd), 1e-3)) < 1e-4

        for _ in range(100):  # full pose jacobian
            view = random_view(rng)
            x = rng.uniform(-100, 100, size=3)
            cur = random_transform(rng, max_angle=0.5, span_mm=50.0)
            j = full_pose_jacobian(view, x, cur)
            p = cur.apply(x)
            fd = np.zeros((2, 6))
            for k in range(6):
                e = np.zeros(6)
                e[k] = 1e-6
                fd[:, k] = (
                    project(view, exp_se3(Twist.from_vector(e)).apply(p))
                    - project(view, exp_se3(Twist.from_vector(-e)).apply(p))
                ) / 2e-6
            assert np.max(np.abs(j - fd) / np.maximum(np.abs(fd), 1e-3)) < 1e-4

        # pixel gradient against a finite difference of the pixel energy
        from mvtrack.camera import CameraIntrinsics, CameraView

        intr = CameraIntrinsics(fx=500.0, fy=500.0, cx=79.5, cy=59.5, width=160, height=120)
        view = CameraView(intr, RigidTransform.identity())
        rr = render(make_box(100.0), view, RigidTransform(np.eye(3), np.array([0, 0, 800.0])))
        field = signed_distance(rr.mask)
        ys, xs = np.nonzero(np.abs(field.phi) <= 8.0)
        keep = (xs >= 2) & (xs <= field.width - 3) & (ys >= 2) & (ys <= field.height - 3)
        xs, ys = xs[keep], ys[keep]
        order = rng.permutation(len(xs))[:150]
        failures = 0
        h = 1e-3
        for i in order:
            pos = np.array([float(xs[i]), float(ys[i])])
            pf = float(rng.uniform(0.2, 0.98))
            pb = 1.0 - pf
            g = pixel_gradient(field, pos, pf, pb, 1.2)[0]

            def e_at(p):
                return float(pixel_energy(bilinear(field.phi, p.reshape(1, 2)), pf, pb, 1.2)[0])

            fd = np.array(
                [
                    (e_at(pos + [h, 0]) - e_at(pos - [h, 0])) / (2 * h),
                    (e_at(pos + [0, h]) - e_at(pos - [0, h])) / (2 * h),
                ]
            )
            if np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-9) >= 1e-3:
                failures += 1
        assert failures <= 0.05 * len(order)

        elapsed = time.perf_counter() - t0
        assert elapsed < 10.0
        ok(1, f"4 Jacobian FD suites, pixel-gradient failures {failures}/{len(order)}, {elapsed:.1f} s")


class TestCriterion2AngleTrend:
    def test_angle_sweep_trend(self):
        t0 = time.perf_counter()
        meshes, motion, cfg = default_suite()
        assert motion.frames == 120 and motion.mode == "free_move"
        table = run_angle_sweep(meshes, (10.0, 30.0, 90.0), motion, cfg)
        tz = table.rows["tz(mm)"]
        assert not any(np.isnan(v) for v in tz)
        assert tz[1] > tz[2] > tz[3], f"tz not strictly decreasing: {tz[1:]}"
        ratio = tz[0] / tz[3]
        assert ratio >= 10.0, f"mono/90deg tz ratio {ratio:.1f} < 10"
        elapsed = time.perf_counter() - t0
        assert elapsed < 600.0
        ok(2, f"tz {tz[1]:.2f} > {tz[2]:.2f} > {tz[3]:.2f} mm, mono/90 ratio {ratio:.1f}x, {elapsed:.0f} s")


class TestCriterion3ResolutionTrend:
    def test_resolution_sweep_trend(self):
        t0 = time.perf_counter()
        meshes, motion, cfg = default_suite()
        table = run_resolution_sweep(meshes["torus_knot"], (320, 640, 1280), motion, cfg)
        for name, row in table.rows.items():
            assert not any(np.isnan(v) for v in row), f"{name} has failed cells"
            assert all(b <= a for a, b in zip(row, row[1:])), f"{name} not non-increasing: {row}"
        assert all(v == 0 for v in table.rows["lost_number"])
        elapsed = time.perf_counter() - t0
        assert elapsed < 600.0
        ok(3, f"all rows non-increasing over widths 320/640/1280, lost 0, {elapsed:.0f} s")


class TestCriterion4PixelErrorMapping:
    def test_exact_at_ratio_endpoints(self):
        # f/Z = 1 and f/Z = 2 with exact binary arithmetic
        assert pixel_to_spatial_error(2.0, 1000.0, 1000.0) == 2.0
        assert pixel_to_spatial_error(2.0, 1000.0, 500.0) == 1.0
        assert pixel_to_spatial_error(2.0, 2048.0, 2048.0) == 2.0
        assert pixel_to_spatial_error(2.0, 2048.0, 1024.0) == 1.0
        for f, z in ((1000.0, 800.0), (1536.0, 1024.0), (2000.0, 1250.0)):
            assert 1.0 <= pixel_to_spatial_error(2.0, f, z) <= 2.0
        ok(4, "2 px maps to [1, 2] mm exactly at f/Z in [1, 2]")


class TestCriterion5MonocularEquivalence:
    def test_joint_single_view_equals_monocular(self, rng):
        cfg_e = EnergyConfig()
        mesh = make_torus_knot(194.0)
        rig = make_rig(RigSpec(included_angles_deg=(), intrinsics=replace_width(384)))
        checked = 0
        seed = 0
        while checked < 50:
            seed += 1
            seq = generate_sequence(mesh, rig, MotionSpec(frames=1, seed=seed))
            pert = exp_se3(Twist(rng.uniform(-3, 3, size=3), rng.normal(size=3) * 0.02))
            pose = compose(pert, seq.gt_poses[0])
            state = make_tracker_state(
                [compose(invert(v.object_from_camera), pose) for v in rig], mesh
            )
            views = [replace(v, object_from_camera=state.object_from_camera[i]) for i, v in enumerate(rig)]
            rr = render(mesh, views[0], state.object_from_template)
            obs = build_observation(
                seq.images[0][0], rr, views[0], state.object_from_template, cfg_e
            )
            for _ in range(3):  # compare per iteration along the same path
                mono = monocular_step(obs, views[0], state, cfg_e, damping=0.1)
                joint, _ = joint_step([obs], views, state, cfg_e, damping=0.1)
                assert np.max(np.abs(mono.as_vector() - joint.as_vector())) < 1e-12
                from mvtrack.solver import apply_increment

                state = apply_increment(state, joint)
            checked += 1
        ok(5, "50 random frames, per-iteration increments identical to 1e-12")


def replace_width(width):
    from mvtrack.simulator import DEFAULT_INTRINSICS

    return DEFAULT_INTRINSICS.scaled(width)


class TestCriterion6IncrementMapping:
    def test_views_reconstruct_single_latent(self, rng):
        from mvtrack.solver import apply_increment

        mesh = make_box(120.0)
        rig_template = RigSpec(included_angles_deg=(35.0, 90.0, 140.0))
        views = make_rig(rig_template)
        worst = 0.0
        for _ in range(1000):
            pose = random_transform(rng, max_angle=0.6, span_mm=120.0)
            state = make_tracker_state(
                [compose(invert(v.object_from_camera), pose) for v in views], mesh
            )
            dxi = Twist(rng.uniform(-30, 30, size=3), rng.normal(size=3) * 0.3)
            after = apply_increment(state, dxi)
            recon = [
                compose(o, c)
                for o, c in zip(after.object_from_camera, after.camera_from_template)
            ]
            for r in recon[1:]:
                worst = max(worst, float(np.max(np.abs(r.matrix() - recon[0].matrix()))))
        assert worst < 1e-9
        ok(6, f"1000 random (state, increment) pairs, worst latent disagreement {worst:.2e}")


class TestCriterion7MetricOracles:
    def test_metric_oracles(self, rng):
        pts = rng.uniform(-90, 90, size=(25, 3))
        for _ in range(200):
            a, b = random_transform(rng), random_transform(rng)
            oracle = float(np.mean([np.linalg.norm(a.apply(p) - b.apply(p)) for p in pts]))
            assert abs(add_error(pts, a, b) - oracle) < 1e-12
        for _ in range(200):
            ra, rb = random_rotation(rng), random_rotation(rng)
            assert abs(rotation_error(ra, rb) - quaternion_angle_oracle(ra, rb)) < 1e-9

        mesh = make_box(100.0)
        rot_deg = [0, 1, 2, 3, 4, 5, 4.5, 3, 2, 7]
        trans_x = [0, 5, 49, 20, 0, 50, 50, 10, 0, 30]
        pred = [
            RigidTransform(rot_z(r), np.array([t, 0.0, 0.0]))
            for r, t in zip(rot_deg, trans_x)
        ]
        report = score_sequence(pred, [RigidTransform.identity()] * 10, mesh)
        assert report.resets == [9]
        assert report.success["5deg_5cm"] == pytest.approx(90.0)
        assert report.success["2deg_2cm"] == pytest.approx(30.0)
        assert report.success["5deg"] == pytest.approx(90.0)
        assert report.success["5cm"] == pytest.approx(100.0)
        assert report.success["2deg"] == pytest.approx(40.0)
        assert report.success["2cm"] == pytest.approx(60.0)
        ok(7, "ADD vertex-loop 1e-12, rotation quaternion 1e-9, schedule counts + 1 reset")


class TestCriterion8ConvergenceBasin:
    def test_recovery_from_offsets(self):
        t0 = time.perf_counter()
        mesh = make_torus_knot(194.0)
        rig = make_rig(RigSpec(included_angles_deg=(90.0,)))
        seq = generate_sequence(mesh, rig, MotionSpec(frames=1, seed=3))
        gt = seq.gt_poses[0]
        cfg_e = EnergyConfig()
        cfg_s = SolverConfig(rounds=4, iterations_per_round=7)
        rng = np.random.default_rng(2024)
        hits = 0
        worst_t = worst_r = 0.0
        trials = 100
        for _ in range(trials):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            # 5 mm along the C-0 optical axis (world +z) plus 2 deg rotation
            pert = exp_se3(Twist(np.array([0.0, 0.0, 5.0]), np.radians(2.0) * axis))
            state = make_tracker_state(
                [compose(invert(v.object_from_camera), compose(pert, gt)) for v in rig],
                mesh, cfg_s.rounds, cfg_s.iterations_per_round,
            )
            state, report, _ = track_frame(state, seq.images[0], mesh, rig, cfg_e, cfg_s)
            est = compose(rig[0].object_from_camera, state.camera_from_template[0])
            te = float(np.linalg.norm(est.translation - gt.translation))
            re_ = rotation_error(est.rotation, gt.rotation)
            worst_t = max(worst_t, te)
            worst_r = max(worst_r, re_)
            if te < 0.5 and re_ < 0.2:
                hits += 1
        assert hits >= 95, f"only {hits}/100 trials recovered"
        elapsed = time.perf_counter() - t0
        ok(8, f"{hits}/100 recovered, worst {worst_t:.3f} mm / {worst_r:.3f} deg, {elapsed:.0f} s")


class TestCriterion9Determinism:
    def test_cli_outputs_byte_identical(self, tmp_path):
        config = {
            "mesh": {"kind": "notched_box", "size_mm": 150.0},
            "rig": {
                "included_angles_deg": [90.0],
                "intrinsics": {
                    "fx": 220.0, "fy": 220.0, "cx": 127.5, "cy": 95.5,
                    "width": 256, "height": 192,
                },
            },
            "motion": {"frames": 2, "seed": 6, "translation_step_mm": 2.0,
                       "rotation_step_deg": 1.0},
            "noise_sigma": 2.0,
            "sweep_angles_deg": [90.0],
            "sweep_widths": [256],
            "use_mesh_suite": False,
        }
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(config))
        pairs = []
        for run in ("a", "b"):
            sim_out = tmp_path / f"sim_{run}"
            sweep_out = tmp_path / f"sweep_{run}"
            assert cli.main(["simulate", "--config", str(cfg), "--out", str(sim_out)]) == 0
            assert cli.main(["sweep", "--config", str(cfg), "--out", str(sweep_out)]) == 0
            pairs.append((sim_out, sweep_out))
        (sim_a, sweep_a), (sim_b, sweep_b) = pairs
        for rel in ("rig.json", "gt.poses", "mesh.obj",
                    "view_0/frame_00000.ppm", "view_1/frame_00001.ppm"):
            assert (sim_a / rel).read_bytes() == (sim_b / rel).read_bytes(), rel
        for rel in ("angle_sweep.csv", "resolution_sweep.csv"):
            assert (sweep_a / rel).read_bytes() == (sweep_b / rel).read_bytes(), rel
        ok(9, "simulate and sweep byte-identical across two runs")

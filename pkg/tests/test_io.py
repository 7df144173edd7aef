import numpy as np
import pytest

from mvtrack import io as mio
from mvtrack.camera import CameraIntrinsics, CameraView
from mvtrack.mesh import MeshFormatError, load_obj, make_box, save_obj
from mvtrack.renderer import SilhouetteMask, signed_distance
from mvtrack.simulator import MotionSpec, RigSpec, generate_sequence, make_rig

from conftest import random_transform


class TestImages:
    def test_ppm_round_trip(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(17, 23, 3), dtype=np.uint8)
        path = tmp_path / "img.ppm"
        mio.write_ppm(path, img)
        assert np.array_equal(mio.read_ppm(path), img)

    def test_ppm_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P3\n2 2\n255\n")
        with pytest.raises(mio.FileFormatError):
            mio.read_ppm(path)

    def test_pgm_header(self, tmp_path):
        occ = np.zeros((4, 6), dtype=bool)
        occ[1, 2] = True
        path = tmp_path / "mask.pgm"
        mio.write_pgm(path, SilhouetteMask(occ))
        data = path.read_bytes()
        assert data.startswith(b"P5\n6 4\n255\n")
        assert data[len(b"P5\n6 4\n255\n") :][1 * 6 + 2] == 255

    def test_pfm_header_and_payload(self, tmp_path):
        occ = np.zeros((4, 6), dtype=bool)
        occ[2, 2] = True
        field = signed_distance(SilhouetteMask(occ))
        path = tmp_path / "phi.pfm"
        mio.write_pfm(path, field)
        data = path.read_bytes()
        header = b"Pf\n6 4\n-1.0\n"
        assert data.startswith(header)
        values = np.frombuffer(data[len(header):], dtype="<f4").reshape(4, 6)
        assert np.allclose(values, field.phi.astype(np.float32))


class TestTrajectories:
    def test_round_trip(self, tmp_path, rng):
        poses = [random_transform(rng) for _ in range(5)]
        path = tmp_path / "traj.poses"
        mio.save_trajectory(path, poses)
        loaded = mio.load_trajectory(path)
        assert [k for k, _ in loaded] == list(range(5))
        for (_, got), want in zip(loaded, poses):
            assert np.max(np.abs(got.rotation - want.rotation)) < 1e-12
            assert np.max(np.abs(got.translation - want.translation)) < 1e-12

    def test_comments_and_custom_indices(self, tmp_path, rng):
        poses = [random_transform(rng) for _ in range(3)]
        path = tmp_path / "traj.poses"
        mio.save_trajectory(path, poses, indices=[2, 5, 9])
        text = path.read_text()
        assert text.startswith("#")
        loaded = mio.load_trajectory(path)
        assert [k for k, _ in loaded] == [2, 5, 9]

    def test_non_increasing_indices_rejected(self, tmp_path, rng):
        poses = [random_transform(rng) for _ in range(2)]
        path = tmp_path / "traj.poses"
        mio.save_trajectory(path, poses, indices=[3, 3])
        with pytest.raises(mio.FileFormatError):
            mio.load_trajectory(path)

    def test_mild_drift_reorthonormalized_with_warning(self, tmp_path, rng):
        pose = random_transform(rng)
        drifted = pose.rotation + rng.normal(scale=3e-8, size=(3, 3))
        nums = list(drifted.reshape(9)) + list(pose.translation)
        path = tmp_path / "traj.poses"
        path.write_text("0 " + " ".join(f"{v:.17g}" for v in nums) + "\n")
        with pytest.warns(UserWarning):
            loaded = mio.load_trajectory(path)
        got = loaded[0][1].rotation
        assert np.max(np.abs(got.T @ got - np.eye(3))) < 1e-12

    def test_gross_drift_rejected(self, tmp_path, rng):
        pose = random_transform(rng)
        bad = pose.rotation * 1.01
        nums = list(bad.reshape(9)) + [0.0, 0.0, 0.0]
        path = tmp_path / "traj.poses"
        path.write_text("0 " + " ".join(f"{v:.17g}" for v in nums) + "\n")
        with pytest.raises(mio.FileFormatError):
            mio.load_trajectory(path)

    def test_field_count_diagnostics(self, tmp_path):
        path = tmp_path / "traj.poses"
        path.write_text("0 1 2 3\n")
        with pytest.raises(mio.FileFormatError) as err:
            mio.load_trajectory(path)
        assert "13 fields" in str(err.value)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "traj.poses"
        path.write_text("# nothing\n")
        with pytest.raises(mio.FileFormatError):
            mio.load_trajectory(path)


class TestRig:
    def make_views(self, rng):
        intr = CameraIntrinsics(fx=500.0, fy=510.0, cx=320.0, cy=240.0, width=640, height=480)
        return [CameraView(intr, random_transform(rng), index=i) for i in range(2)]

    def test_round_trip(self, tmp_path, rng):
        views = self.make_views(rng)
        path = tmp_path / "rig.json"
        mio.save_rig(path, views)
        loaded = mio.load_rig(path)
        assert len(loaded) == 2
        for got, want in zip(loaded, views):
            assert got.intrinsics == want.intrinsics
            assert np.max(np.abs(got.object_from_camera.matrix() - want.object_from_camera.matrix())) < 1e-12

    def test_missing_field_rejected(self, tmp_path, rng):
        views = self.make_views(rng)
        path = tmp_path / "rig.json"
        mio.save_rig(path, views)
        import json

        payload = json.loads(path.read_text())
        del payload["cameras"][0]["fx"]
        path.write_text(json.dumps(payload))
        with pytest.raises(mio.FileFormatError) as err:
            mio.load_rig(path)
        assert "fx" in str(err.value)

    def test_bad_matrix_length(self, tmp_path, rng):
        views = self.make_views(rng)
        path = tmp_path / "rig.json"
        mio.save_rig(path, views)
        import json

        payload = json.loads(path.read_text())
        payload["cameras"][0]["object_from_camera"] = [1.0] * 12
        path.write_text(json.dumps(payload))
        with pytest.raises(mio.FileFormatError):
            mio.load_rig(path)


class TestSequenceDir:
    def test_save_and_reload(self, tmp_path):
        mesh = make_box(80.0)
        rig = make_rig(RigSpec(included_angles_deg=(90.0,)))
        seq = generate_sequence(mesh, rig, MotionSpec(frames=3, seed=2))
        out = tmp_path / "seq"
        mio.save_sequence(out, seq)
        loaded = mio.SequenceDir(out)
        assert loaded.frame_count == 3
        assert len(loaded.views) == 2
        assert len(loaded.gt_poses) == 3
        for got, want in zip(loaded.frame(1), seq.images[1]):
            assert np.array_equal(got, want)
        for got, want in zip(loaded.gt_poses, seq.gt_poses):
            assert np.max(np.abs(got.matrix() - want.matrix())) < 1e-12

    def test_camera_trajectories_round_trip(self, tmp_path):
        mesh = make_box(80.0)
        rig = make_rig(RigSpec(included_angles_deg=(90.0,)))
        seq = generate_sequence(mesh, rig, MotionSpec(frames=3, seed=2, mode="cameras_move"))
        out = tmp_path / "seq"
        mio.save_sequence(out, seq)
        loaded = mio.SequenceDir(out)
        assert loaded.camera_poses is not None
        for k in range(3):
            for got, want in zip(loaded.camera_poses[k], seq.camera_poses[k]):
                assert np.max(np.abs(got.matrix() - want.matrix())) < 1e-12

    def test_missing_rig_rejected(self, tmp_path):
        with pytest.raises(mio.FileFormatError):
            mio.SequenceDir(tmp_path)


class TestObj:
    def test_round_trip(self, tmp_path):
        mesh = make_box(50.0)
        path = tmp_path / "box.obj"
        save_obj(path, mesh)
        loaded = load_obj(path)
        assert np.allclose(loaded.vertices, mesh.vertices, atol=1e-6)
        assert np.array_equal(loaded.faces, mesh.faces)

    def test_polygon_fan_triangulation(self, tmp_path):
        path = tmp_path / "quad.obj"
        path.write_text(
            "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\n"
            "f 1 2 3 4\nf 1/1 2/2 5/5\nf 1//1 3//2 5//3\nf 2 3 5\n"
        )
        mesh = load_obj(path)
        assert mesh.faces.shape[0] == 5  # quad fans into two triangles

    def test_bad_face_reports_line(self, tmp_path):
        path = tmp_path / "bad.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 x\n")
        with pytest.raises(MeshFormatError) as err:
            load_obj(path)
        assert ":5:" in str(err.value)

    def test_adapter_registry(self):
        class Fake:
            def load_trajectory(self, path):
                return []

            def load_rig(self, path):
                return []

        mio.register_adapter("fake", Fake())
        assert "fake" in mio.ADAPTERS

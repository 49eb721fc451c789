import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from advpose import quatgeom as qg
from advpose import scenes
from advpose.serialize import ChecksumMismatch, FormatVersionMismatch

from _oracles import quat_to_matrix


def small_scene(seed=0, n=16):
    return scenes.generate_scene(seed, n, (1.0, 2.0, 0.5))


class TestGenerateScene:
    def test_deterministic(self):
        a = scenes.generate_scene(3, 64, (1, 1, 1))
        b = scenes.generate_scene(3, 64, (1, 1, 1))
        np.testing.assert_array_equal(a.landmarks, b.landmarks)

    def test_bounds(self):
        s = scenes.generate_scene(1, 128, (1, 1, 1))
        assert np.all(np.abs(s.landmarks) <= 1.0)

    def test_count(self):
        assert scenes.generate_scene(9, 64, (1, 1, 1)).n_landmarks == 64

    def test_too_few(self):
        with pytest.raises(scenes.TooFewLandmarks):
            scenes.generate_scene(0, 7, (1, 1, 1))


class TestTrajectory:
    def test_single_frame(self):
        poses = scenes.sample_trajectory(small_scene(), 1, 0, 5.0)
        assert len(poses) == 1
        assert abs(np.linalg.norm(poses[0].q) - 1) < 1e-12

    def test_zero_smoothness_constant_rotation(self):
        poses = scenes.sample_trajectory(small_scene(), 10, 0, 0.0)
        for p in poses[1:]:
            assert qg.rotation_error_deg(poses[0].q, p.q) < 1e-6

    @given(st.integers(0, 500), st.floats(0.5, 30.0))
    def test_consecutive_rotation_bounded(self, seed, smooth):
        poses = scenes.sample_trajectory(small_scene(seed % 5), 20, seed, smooth)
        for a, b in zip(poses, poses[1:]):
            assert qg.rotation_error_deg(a.q, b.q) <= smooth + 1e-6

    def test_translations_inside_bound(self):
        scene = small_scene()
        poses = scenes.sample_trajectory(scene, 500, 4, 10.0)
        ts = np.stack([p.t for p in poses])
        assert np.all(np.abs(ts) <= 1.5 * scene.extent + 1e-12)

    def test_quaternions_canonical(self):
        for p in scenes.sample_trajectory(small_scene(), 50, 2, 10.0):
            assert p.q[0] >= 0.0


class TestObserve:
    def test_identity_pose(self):
        scene = small_scene()
        pose = qg.Pose(np.array([1.0, 0, 0, 0]), np.zeros(3))
        np.testing.assert_allclose(scenes.observe(scene, pose), scene.landmarks.reshape(-1))

    def test_pure_translation(self):
        scene = small_scene()
        t = np.array([0.3, -0.1, 0.7])
        obs = scenes.observe(scene, qg.Pose(np.array([1.0, 0, 0, 0]), t))
        np.testing.assert_allclose(obs, (scene.landmarks - t).reshape(-1), atol=1e-14)

    @given(st.integers(0, 2000))
    def test_matches_matrix_oracle(self, seed):
        rng = np.random.default_rng(seed)
        scene = small_scene(seed % 7)
        pose = qg.Pose(qg.random_unit_quaternion(rng), rng.uniform(-1, 1, 3))
        obs = scenes.observe(scene, pose)
        R = quat_to_matrix(pose.q)
        expected = (R.T @ (scene.landmarks - pose.t).T).T.reshape(-1)
        np.testing.assert_allclose(obs, expected, atol=1e-10)

    @given(st.integers(0, 2000))
    def test_inverse_recovers_world(self, seed):
        rng = np.random.default_rng(seed)
        scene = small_scene()
        pose = qg.Pose(qg.random_unit_quaternion(rng), rng.uniform(-1, 1, 3))
        cam = scenes.observe(scene, pose).reshape(-1, 3)
        world = qg.rotate_vector(pose.q, cam) + pose.t
        np.testing.assert_allclose(world, scene.landmarks, atol=1e-9)


class TestExtractor:
    def test_zero_observation_zero_features(self):
        ex = scenes.make_extractor(0, obs_dim=12, hidden_dim=8, feature_dim=5)
        np.testing.assert_array_equal(scenes.extract_features(np.zeros(12), ex), np.zeros(5))

    def test_pure_function(self):
        ex = scenes.make_extractor(1, obs_dim=12, hidden_dim=8, feature_dim=5)
        obs = np.random.default_rng(0).normal(size=12)
        first = scenes.extract_features(obs, ex)
        for _ in range(1000):
            np.testing.assert_array_equal(scenes.extract_features(obs, ex), first)

    def test_feature_dim_sixty(self):
        ex = scenes.make_extractor(2, obs_dim=48, hidden_dim=16, feature_dim=60)
        assert scenes.extract_features(np.ones(48), ex).shape == (60,)

    def test_shape_mismatch(self):
        ex = scenes.make_extractor(0, obs_dim=12, hidden_dim=8, feature_dim=5)
        with pytest.raises(ValueError):
            scenes.extract_features(np.zeros(11), ex)

    def test_batch_matches_single(self, rng):
        ex = scenes.make_extractor(3, obs_dim=12, hidden_dim=8, feature_dim=5)
        obs = rng.normal(size=(6, 12))
        batch = scenes.extract_features_batch(obs, ex)
        for i in range(6):
            np.testing.assert_allclose(batch[i], scenes.extract_features(obs[i], ex), atol=1e-12)


class TestReplicatePose:
    def test_two_full_copies(self):
        v = np.arange(7.0)
        np.testing.assert_array_equal(scenes.replicate_pose(v, 14), np.concatenate([v, v]))

    def test_exact_length(self):
        v = np.arange(7.0)
        np.testing.assert_array_equal(scenes.replicate_pose(v, 7), v)

    def test_truncated_copy(self):
        v = np.arange(6.0)
        np.testing.assert_array_equal(scenes.replicate_pose(v, 8), np.array([0, 1, 2, 3, 4, 5, 0, 1.0]))

    @given(st.integers(1, 7), st.integers(7, 80))
    def test_dereplicate_roundtrip(self, k, d_f):
        v = np.arange(float(k))
        tiled = scenes.replicate_pose(v, d_f)
        np.testing.assert_array_equal(scenes.dereplicate_pose(tiled, k), v)


class TestDataset:
    def build(self, **kw):
        args = dict(smoothness=8.0, obs_noise=0.0, feature_dim=10)
        args.update(kw)
        return scenes.build_dataset(5, 8, (1, 1, 1), 12, 6, **args)

    def test_split_sizes_and_disjoint(self):
        ds = self.build()
        assert len(ds.train) == 12 and len(ds.test) == 6
        scenes.validate_dataset(ds)  # raises if a pose is shared

    def test_save_load_roundtrip(self, tmp_path):
        ds = self.build(obs_noise=0.01)
        path = tmp_path / "ds.bin"
        scenes.save_dataset(ds, path)
        back = scenes.load_dataset(path)
        np.testing.assert_array_equal(back.scene.landmarks, ds.scene.landmarks)
        np.testing.assert_array_equal(back.extractor.projection, ds.extractor.projection)
        np.testing.assert_array_equal(back.extractor.reduction, ds.extractor.reduction)
        assert back.meta == ds.meta
        for a, b in zip(ds.train + ds.test, back.train + back.test):
            np.testing.assert_array_equal(a.pose_gt.q, b.pose_gt.q)
            np.testing.assert_array_equal(a.pose_gt.t, b.pose_gt.t)
            np.testing.assert_array_equal(a.observation, b.observation)
            np.testing.assert_array_equal(a.features, b.features)

    def test_truncated_dataset_never_partial(self, tmp_path):
        ds = self.build()
        path = tmp_path / "ds.bin"
        scenes.save_dataset(ds, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(ChecksumMismatch):
            scenes.load_dataset(path)

    def test_newer_version_rejected(self, tmp_path, monkeypatch):
        ds = self.build()
        path = tmp_path / "ds.bin"
        monkeypatch.setattr(scenes, "DATASET_VERSION", 2)
        scenes.save_dataset(ds, path)
        monkeypatch.setattr(scenes, "DATASET_VERSION", 1)
        with pytest.raises(FormatVersionMismatch) as exc:
            scenes.load_dataset(path)
        assert "2" in str(exc.value) and "1" in str(exc.value)

    def test_features_computed_from_observation(self):
        ds = self.build(obs_noise=0.02)
        for s in ds.train[:3]:
            np.testing.assert_allclose(s.features, scenes.extract_features(s.observation, ds.extractor))

"""Synthetic landmark scenes, camera trajectories and frozen features.

Stands in for a real dataset plus a frozen image-feature extractor: a scene
is a box of 3D landmarks, an "image" is the landmark cloud expressed in the
camera frame, and f(x) is a frozen random two-layer map of that observation.
Everything is seed-deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quatgeom
from .quatgeom import MODE_QUAT, Pose
from .serialize import read_container, write_container

DATASET_KIND = "pose-scene-dataset"
DATASET_VERSION = 1

# feature widths chosen so the pose vector tiles to an integer number of
# copies: 10 x 7 in quaternion mode, 10 x 6 in log-quaternion mode
DEFAULT_FEATURE_DIM = {MODE_QUAT: 70, "logq": 60}


class TooFewLandmarks(ValueError):
    pass


@dataclass
class SceneModel:
    landmarks: np.ndarray  # (n, 3) world coordinates
    extent: np.ndarray  # (3,) bounding-box half-widths
    seed: int

    @property
    def n_landmarks(self) -> int:
        return len(self.landmarks)

    @property
    def observation_dim(self) -> int:
        return 3 * self.n_landmarks


@dataclass
class ExtractorParams:
    """Frozen two-layer feature map: reduction @ tanh(projection @ obs).

    The reduction layer is linear and bias-free; both matrices are fixed at
    construction and never trained.
    """

    projection: np.ndarray  # (hidden, obs_dim)
    reduction: np.ndarray  # (d_f, hidden)
    seed: int

    @property
    def feature_dim(self) -> int:
        return self.reduction.shape[0]

    @property
    def observation_dim(self) -> int:
        return self.projection.shape[1]


@dataclass
class FrameSample:
    pose_gt: Pose
    observation: np.ndarray
    features: np.ndarray


@dataclass
class Dataset:
    scene: SceneModel
    extractor: ExtractorParams
    train: list[FrameSample]
    test: list[FrameSample]
    meta: dict = field(default_factory=dict)


def generate_scene(seed: int, n_landmarks: int, extent) -> SceneModel:
    """Landmarks drawn uniformly in the box [-extent, extent]^3."""
    if n_landmarks < 8:
        raise TooFewLandmarks(f"need at least 8 landmarks, got {n_landmarks}")
    extent = np.asarray(extent, dtype=np.float64)
    rng = np.random.default_rng(seed)
    landmarks = rng.uniform(-extent, extent, size=(n_landmarks, 3))
    return SceneModel(landmarks=landmarks, extent=extent, seed=int(seed))


def sample_trajectory(
    scene: SceneModel, n_frames: int, rng_seed, smoothness: float, *, start_cone_deg: float | None = None
) -> list[Pose]:
    """Smooth random camera walk.

    Translations stay inside 1.5x the scene extent; consecutive rotations
    differ by at most `smoothness` degrees. The start orientation is
    uniform over all rotations by default; a start cone (in degrees around
    the reference orientation) models handheld cameras whose orientations
    cluster, and keeps rotation angles away from the 180-degree boundary
    where the log-quaternion chart is discontinuous. All quaternions are
    normalized and canonical (w >= 0).
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    rng = np.random.default_rng(rng_seed)
    bound = 1.5 * scene.extent
    step_scale = 0.1 * scene.extent
    t = rng.uniform(-scene.extent, scene.extent)
    if start_cone_deg is None:
        q = quatgeom.random_unit_quaternion(rng)
    else:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        start_half = 0.5 * np.radians(rng.uniform(0.0, start_cone_deg))
        q = quatgeom.canonicalize(quatgeom.quat_exp(axis * start_half))
    max_half = 0.5 * np.radians(smoothness)
    poses = [Pose(q.copy(), t.copy())]
    for _ in range(n_frames - 1):
        t = np.clip(t + rng.uniform(-step_scale, step_scale), -bound, bound)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        half = rng.uniform(0.0, max_half)
        q = quatgeom.canonicalize(
            quatgeom.normalize(quatgeom.quat_mul(q, quatgeom.quat_exp(axis * half)))
        )
        poses.append(Pose(q.copy(), t.copy()))
    return poses


def observe(scene: SceneModel, pose: Pose) -> np.ndarray:
    """Landmarks in the camera frame, flattened in landmark order.

    Convention: p_cam = R(q)^-1 (p_world - t), so the identity pose returns
    the landmark list itself and a pure translation shifts every landmark
    by -t.
    """
    cam = quatgeom.rotate_vector(quatgeom.quat_conj(pose.q), scene.landmarks - pose.t)
    return cam.reshape(-1)


def make_extractor(seed, obs_dim: int, hidden_dim: int, feature_dim: int) -> ExtractorParams:
    rng = np.random.default_rng(seed)
    projection = rng.normal(size=(hidden_dim, obs_dim)) / np.sqrt(obs_dim)
    reduction = rng.normal(size=(feature_dim, hidden_dim)) / np.sqrt(hidden_dim)
    seed_int = int(seed[0]) if isinstance(seed, (list, tuple)) else int(seed)
    return ExtractorParams(projection=projection, reduction=reduction, seed=seed_int)


def extract_features(observation: np.ndarray, extractor: ExtractorParams) -> np.ndarray:
    observation = np.asarray(observation, dtype=np.float64)
    if observation.shape != (extractor.observation_dim,):
        raise ValueError(
            f"observation shape {observation.shape} does not match extractor "
            f"input ({extractor.observation_dim},)"
        )
    return extractor.reduction @ np.tanh(extractor.projection @ observation)


def extract_features_batch(observations: np.ndarray, extractor: ExtractorParams) -> np.ndarray:
    """Row-per-observation version of extract_features."""
    return np.tanh(observations @ extractor.projection.T) @ extractor.reduction.T


def replicate_pose(pose_vec: np.ndarray, feature_dim: int) -> np.ndarray:
    """Tile a pose vector to feature_dim entries: out[i] = pose_vec[i % k]."""
    pose_vec = np.asarray(pose_vec, dtype=np.float64)
    k = len(pose_vec)
    if k == 0 or k > feature_dim:
        raise ValueError(f"pose vector of length {k} cannot tile to {feature_dim}")
    return np.take(pose_vec, np.arange(feature_dim) % k)


def dereplicate_pose(tiled: np.ndarray, k: int) -> np.ndarray:
    """Inverse of replicate_pose: the first k entries."""
    return np.asarray(tiled, dtype=np.float64)[:k].copy()


def build_dataset(
    seed: int,
    n_landmarks: int,
    extent,
    n_train: int,
    n_test: int,
    *,
    smoothness: float = 8.0,
    obs_noise: float = 0.0,
    extractor_seed: int | None = None,
    extractor_hidden: int = 128,
    feature_dim: int = 70,
    frames_per_trajectory: int = 16,
    start_cone_deg: float | None = None,
) -> Dataset:
    """Scene + disjoint sets of camera walks (train/test) + frozen features.

    Each split consists of several independent trajectories (as real indoor
    relocalization sequences do), so test walks stay inside the pose region
    the training walks cover; no trajectory is shared between splits.
    """
    scene = generate_scene(seed, n_landmarks, extent)
    ex_seed = seed if extractor_seed is None else extractor_seed
    extractor = make_extractor([ex_seed, 5], scene.observation_dim, extractor_hidden, feature_dim)
    noise_rng = np.random.default_rng([seed, 3])

    def walks(total, stream):
        poses = []
        walk = 0
        while len(poses) < total:
            n = min(frames_per_trajectory, total - len(poses))
            poses.extend(
                sample_trajectory(scene, n, [seed, stream, walk], smoothness, start_cone_deg=start_cone_deg)
            )
            walk += 1
        return poses

    def frames(poses):
        out = []
        for pose in poses:
            obs = observe(scene, pose)
            if obs_noise > 0.0:
                obs = obs + obs_noise * noise_rng.normal(size=obs.shape)
            out.append(FrameSample(pose_gt=pose, observation=obs, features=extract_features(obs, extractor)))
        return out

    train = frames(walks(n_train, 1))
    test = frames(walks(n_test, 2))
    meta = {
        "seed": int(seed),
        "extractor_seed": int(ex_seed),
        "n_landmarks": int(n_landmarks),
        "extent": [float(x) for x in np.asarray(extent, dtype=np.float64)],
        "n_train": int(n_train),
        "n_test": int(n_test),
        "smoothness": float(smoothness),
        "obs_noise": float(obs_noise),
        "extractor_hidden": int(extractor_hidden),
        "feature_dim": int(feature_dim),
        "frames_per_trajectory": int(frames_per_trajectory),
        "start_cone_deg": None if start_cone_deg is None else float(start_cone_deg),
        "trajectory_seed_streams": {"train": [int(seed), 1], "test": [int(seed), 2]},
    }
    ds = Dataset(scene=scene, extractor=extractor, train=train, test=test, meta=meta)
    validate_dataset(ds)
    return ds


def validate_dataset(ds: Dataset) -> None:
    """Assert the train/test split holds no shared ground-truth pose."""
    seen = {(tuple(s.pose_gt.q), tuple(s.pose_gt.t)) for s in ds.train}
    for s in ds.test:
        key = (tuple(s.pose_gt.q), tuple(s.pose_gt.t))
        if key in seen:
            raise ValueError("train and test splits share a ground-truth pose")


def _stack(samples: list[FrameSample]):
    q = np.stack([s.pose_gt.q for s in samples])
    t = np.stack([s.pose_gt.t for s in samples])
    obs = np.stack([s.observation for s in samples])
    feat = np.stack([s.features for s in samples])
    return q, t, obs, feat


def save_dataset(ds: Dataset, path) -> None:
    arrays = [
        ("landmarks", ds.scene.landmarks),
        ("extent", ds.scene.extent),
        ("extractor/projection", ds.extractor.projection),
        ("extractor/reduction", ds.extractor.reduction),
    ]
    for split, samples in (("train", ds.train), ("test", ds.test)):
        q, t, obs, feat = _stack(samples)
        arrays += [(f"{split}/q", q), (f"{split}/t", t), (f"{split}/obs", obs), (f"{split}/feat", feat)]
    meta = dict(ds.meta)
    meta["scene_seed"] = ds.scene.seed
    meta["extractor_rng_seed"] = ds.extractor.seed
    write_container(path, DATASET_KIND, DATASET_VERSION, meta, arrays)


def load_dataset(path) -> Dataset:
    meta, arrays = read_container(path, DATASET_KIND, DATASET_VERSION)
    scene = SceneModel(
        landmarks=arrays["landmarks"],
        extent=arrays["extent"],
        seed=int(meta["scene_seed"]),
    )
    extractor = ExtractorParams(
        projection=arrays["extractor/projection"],
        reduction=arrays["extractor/reduction"],
        seed=int(meta["extractor_rng_seed"]),
    )

    def unpack(split):
        q, t = arrays[f"{split}/q"], arrays[f"{split}/t"]
        obs, feat = arrays[f"{split}/obs"], arrays[f"{split}/feat"]
        return [
            FrameSample(pose_gt=Pose(q[i], t[i]), observation=obs[i], features=feat[i])
            for i in range(len(q))
        ]

    meta = {k: v for k, v in meta.items() if k not in ("scene_seed", "extractor_rng_seed")}
    return Dataset(scene=scene, extractor=extractor, train=unpack("train"), test=unpack("test"), meta=meta)

"""Pose regressor and pose discriminator networks.

Both are small dense ELU stacks built on the autodiff engine. The regressor
maps an observation to a rotation head (4 outputs in quaternion mode, 3 in
log-quaternion mode) and a translation head (3 outputs), and owns the two
scalar loss-balancing parameters. The discriminator scores
(features, replicated pose) pairs with a sigmoid output in (0, 1).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import quatgeom
from .autodiff import ParamStore, Tensor, affine, concat, elu, reshape, sigmoid, tile_last, vnormalize
from .quatgeom import MODE_QUAT, NearZeroQuaternion, Pose

log = logging.getLogger(__name__)


def glorot_uniform(rng: np.random.Generator, n_out: int, n_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


def _dense_params(store: ParamStore, rng, prefix: str, widths: list[int]):
    """Chain of (W, b) pairs for consecutive widths; biases start at zero."""
    layers = []
    for i in range(len(widths) - 1):
        w = store.add(f"{prefix}.{i}.W", Tensor(glorot_uniform(rng, widths[i + 1], widths[i]), True))
        b = store.add(f"{prefix}.{i}.b", Tensor(np.zeros(widths[i + 1]), True))
        layers.append((w, b))
    return layers


@dataclass
class RegressedBatch:
    """Inference output: Pose objects plus the raw mode vectors.

    `rot` is the network-facing rotation (unit quaternion rows in quaternion
    mode, raw log-quaternion rows otherwise) so refinement can start from the
    exact regressed coordinates without a conversion roundtrip.
    """

    poses: list[Pose]
    rot: np.ndarray
    t: np.ndarray


class PoseRegressor:
    def __init__(self, obs_dim: int, mode: str, trunk=(128, 64), *, beta0=0.0, alpha0=-3.0, seed=0):
        quatgeom.rotation_dim(mode)  # validates
        self.mode = mode
        self.obs_dim = int(obs_dim)
        self.trunk_widths = tuple(int(w) for w in trunk)
        rng = np.random.default_rng(seed)
        store = ParamStore()
        widths = [self.obs_dim, *self.trunk_widths]
        self.trunk = _dense_params(store, rng, "trunk", widths)
        k = quatgeom.rotation_dim(mode)
        # rotation-head bias starts at the identity rotation so a fresh net
        # emits a valid unit quaternion even for an all-zero observation
        rot_bias = quatgeom.IDENTITY.copy() if mode == MODE_QUAT else np.zeros(3)
        self.head_rot = (
            store.add("head_rot.W", Tensor(glorot_uniform(rng, k, widths[-1]), True)),
            store.add("head_rot.b", Tensor(rot_bias, True)),
        )
        self.head_t = (
            store.add("head_t.W", Tensor(glorot_uniform(rng, 3, widths[-1]), True)),
            store.add("head_t.b", Tensor(np.zeros(3), True)),
        )
        self.beta = store.add("beta", Tensor(float(beta0), True))
        self.alpha = store.add("alpha", Tensor(float(alpha0), True))
        self.store = store

    def arch(self) -> dict:
        return {"obs_dim": self.obs_dim, "mode": self.mode, "trunk": list(self.trunk_widths)}

    def forward(self, obs: Tensor) -> tuple[Tensor, Tensor]:
        """Raw heads: (rotation output, translation). Accepts (n,) or (b, n)."""
        h = obs
        for w, b in self.trunk:
            h = elu(affine(h, w, b))
        rot = affine(h, *self.head_rot)
        t = affine(h, *self.head_t)
        return rot, t

    def predict(self, obs: Tensor) -> tuple[Tensor, Tensor]:
        """Mode-constrained pose output, differentiable.

        Quaternion mode normalizes the raw 4-vector onto the unit sphere;
        log-quaternion output is unconstrained.
        """
        rot, t = self.forward(obs)
        if self.mode == MODE_QUAT:
            if np.any(np.linalg.norm(np.atleast_2d(rot.data), axis=1) <= 1e-12):
                raise NearZeroQuaternion("regressor produced a near-zero raw quaternion")
            rot = vnormalize(rot)
        return rot, t

    def regress(self, observations: np.ndarray, *, degenerate: str = "raise") -> RegressedBatch:
        """Inference on raw arrays (no tape). observations: (n,) or (b, n).

        degenerate="identity" substitutes the identity rotation for rows with
        a near-zero raw quaternion (and logs), instead of raising.
        """
        obs = np.atleast_2d(np.asarray(observations, dtype=np.float64))
        rot_raw, t = self.forward(Tensor(obs))
        rot = rot_raw.data.copy()
        if self.mode == MODE_QUAT:
            norms = np.linalg.norm(rot, axis=1)
            bad = norms <= 1e-12
            if bad.any():
                if degenerate != "identity":
                    raise NearZeroQuaternion(f"{int(bad.sum())} regressed quaternion(s) with norm <= 1e-12")
                log.warning("substituting identity rotation for %d degenerate frame(s)", int(bad.sum()))
                rot[bad] = quatgeom.IDENTITY
                norms[bad] = 1.0
            rot = rot / norms[:, None]
            poses = [Pose(rot[i], t.data[i]) for i in range(len(rot))]
        else:
            poses = [Pose(quatgeom.quat_exp(rot[i]), t.data[i]) for i in range(len(rot))]
        return RegressedBatch(poses=poses, rot=rot, t=t.data.copy())


class PoseDiscriminator:
    """Dense ELU stack ending in a width-1 sigmoid.

    Input is features ++ replicated pose (width 2*d_f); with
    `use_features=False` the input is the replicated pose alone (the
    pose-only ablation arm).
    """

    def __init__(self, feature_dim: int, mode: str, widths=(32, 16), *, use_features=True, seed=0):
        self.mode = mode
        self.feature_dim = int(feature_dim)
        self.widths = tuple(int(w) for w in widths)
        self.use_features = bool(use_features)
        self.pose_dim = quatgeom.rotation_dim(mode) + 3
        in_dim = 2 * self.feature_dim if use_features else self.feature_dim
        rng = np.random.default_rng(seed)
        store = ParamStore()
        self.layers = _dense_params(store, rng, "disc", [in_dim, *self.widths, 1])
        self.store = store

    def arch(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "mode": self.mode,
            "widths": list(self.widths),
            "use_features": self.use_features,
        }

    def forward(self, features: Tensor | None, pose_vec: Tensor) -> Tensor:
        """Probability the pose is a ground-truth one, in (0, 1).

        pose_vec: (k,) or (b, k) with k = pose_dim; output shape () or (b,).
        """
        if pose_vec.data.shape[-1] != self.pose_dim:
            raise ValueError(f"pose vector has {pose_vec.data.shape[-1]} entries, expected {self.pose_dim}")
        x = tile_last(pose_vec, self.feature_dim)
        if self.use_features:
            if features is None:
                raise ValueError("this discriminator requires features")
            x = concat(features, x)
        h = x
        for w, b in self.layers[:-1]:
            h = elu(affine(h, w, b))
        out = sigmoid(affine(h, *self.layers[-1]))
        # squeeze the width-1 output axis
        return reshape(out, out.data.shape[:-1])

    def frozen(self) -> "PoseDiscriminator":
        """Read-only view: same arrays, gradients never recorded for weights."""
        twin = object.__new__(PoseDiscriminator)
        twin.mode = self.mode
        twin.feature_dim = self.feature_dim
        twin.widths = self.widths
        twin.use_features = self.use_features
        twin.pose_dim = self.pose_dim
        store = ParamStore()
        twin.layers = [
            (store.add(f"disc.{i}.W", Tensor(w.data, False)), store.add(f"disc.{i}.b", Tensor(b.data, False)))
            for i, (w, b) in enumerate(self.layers)
        ]
        twin.store = store
        return twin

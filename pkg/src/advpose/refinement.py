"""Frozen-discriminator pose refinement.

Each iteration scores the current pose against the confusion target
(c = 0.5 by default), backpropagates to the pose input only, and steps
downhill. Quaternion mode projects the negative gradient onto the tangent
space of the unit sphere and moves along the geodesic, renormalizing every
iteration; log-quaternion mode takes a plain gradient step. Translation is
updated with the same step size.

Frames are refined in a single batch with sum-reduced loss, so per-frame
gradients (and therefore trajectories) are the same as refining each frame
alone; results do not depend on how frames are grouped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quatgeom
from .autodiff import Tape, Tensor, backward, concat, constant
from .config import RefineConfig
from .losses import refinement_loss
from .quatgeom import MODE_QUAT, Pose


@dataclass
class RefinementTrace:
    """Per-iteration record of one frame's refinement."""

    losses: list[float] = field(default_factory=list)
    grad_rot_norms: list[float] = field(default_factory=list)
    grad_t_norms: list[float] = field(default_factory=list)
    disc_outputs: list[float] = field(default_factory=list)
    quaternions: list[np.ndarray] = field(default_factory=list)
    translations: list[np.ndarray] = field(default_factory=list)
    stop_reason: str = "max_iters"

    def __len__(self):
        return len(self.losses)

    @property
    def iterations(self) -> int:
        return len(self.losses)

    def quaternion_norms(self) -> np.ndarray:
        return np.array([float(np.linalg.norm(q)) for q in self.quaternions])

    def nonmonotonic_steps(self) -> int:
        """Number of iterations whose loss exceeded the previous one."""
        arr = np.asarray(self.losses)
        return int(np.sum(np.diff(arr) > 0)) if len(arr) > 1 else 0


def _bce_value(p: np.ndarray, c: float) -> np.ndarray:
    pc = np.clip(p, 1e-7, 1.0 - 1e-7)
    return -(c * np.log(pc) + (1.0 - c) * np.log1p(-pc))


def _quat_update(rot: np.ndarray, g_rot: np.ndarray, step: float, literal: bool) -> np.ndarray:
    """Batched geodesic update; rows must be unit quaternions.

    Matches quatgeom.tangent_project / geodesic_step composed row by row
    (enforced by tests); the literal variant uses (I - g g^T) g instead of
    the tangent projection.
    """
    g = -g_rot
    if literal:
        v = g * (1.0 - np.sum(g * g, axis=1, keepdims=True))
    else:
        v = g - np.sum(g * rot, axis=1, keepdims=True) * rot
    gamma = np.linalg.norm(v, axis=1, keepdims=True)
    small = gamma[:, 0] < 1e-10
    ang = gamma * step
    with np.errstate(invalid="ignore", divide="ignore"):
        moved = rot * np.cos(ang) + v * (np.sin(ang) / gamma)
    first_order = rot + v * step
    out = np.where(small[:, None], first_order, moved)
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def refine_batch(
    disc,
    features: np.ndarray | None,
    rot0: np.ndarray,
    t0: np.ndarray,
    cfg: RefineConfig,
    mode: str,
) -> tuple[np.ndarray, np.ndarray, list[RefinementTrace]]:
    """Refine a stack of frames; returns (rot, t, traces).

    rot0: (n, 4) unit quaternions in quaternion mode, (n, 3) log-quaternions
    otherwise. The discriminator's weights are never written to — only the
    pose leaves receive updates.
    """
    cfg.validate()
    quat = mode == MODE_QUAT
    rots = np.array(rot0, dtype=np.float64, copy=True)
    ts = np.array(t0, dtype=np.float64, copy=True)
    n = len(rots)
    feats = None if features is None else np.asarray(features, dtype=np.float64)
    frozen = disc.frozen()
    traces = [RefinementTrace() for _ in range(n)]
    active = np.arange(n)

    for _ in range(cfg.max_iters):
        if len(active) == 0:
            break
        rot_leaf = Tensor(rots[active], requires_grad=True)
        t_leaf = Tensor(ts[active], requires_grad=True)
        with Tape() as tape:
            pose_vec = concat(rot_leaf, t_leaf)
            loss, p = refinement_loss(
                frozen, None if feats is None else feats[active], pose_vec, cfg.target_label, reduction="sum"
            )
        grads = backward(loss, tape)
        g_rot = grads[rot_leaf]
        g_t = grads[t_leaf]

        if quat:
            new_rot = _quat_update(rots[active], g_rot, cfg.step_size, cfg.eq7_literal)
        else:
            new_rot = rots[active] - cfg.step_size * g_rot
        new_t = ts[active] - cfg.step_size * g_t

        d_rot = np.linalg.norm(new_rot - rots[active], axis=1)
        d_t = np.linalg.norm(new_t - ts[active], axis=1)
        losses = _bce_value(np.atleast_1d(p.data), cfg.target_label)
        grn = np.linalg.norm(g_rot, axis=1)
        gtn = np.linalg.norm(g_t, axis=1)

        rots[active] = new_rot
        ts[active] = new_t
        for j, frame in enumerate(active):
            tr = traces[frame]
            tr.losses.append(float(losses[j]))
            tr.grad_rot_norms.append(float(grn[j]))
            tr.grad_t_norms.append(float(gtn[j]))
            tr.disc_outputs.append(float(np.atleast_1d(p.data)[j]))
            tr.quaternions.append(new_rot[j].copy() if quat else quatgeom.quat_exp(new_rot[j]))
            tr.translations.append(new_t[j].copy())

        converged = (d_rot < cfg.tol) & (d_t < cfg.tol)
        for frame in active[converged]:
            traces[frame].stop_reason = "converged"
        active = active[~converged]

    return rots, ts, traces


def refine_pose(disc, features, pose0: Pose, cfg: RefineConfig, mode: str) -> tuple[Pose, RefinementTrace]:
    """Single-frame refinement; see refine_batch."""
    if mode == MODE_QUAT:
        rot0 = quatgeom.normalize(pose0.q)[None, :]
    else:
        rot0 = quatgeom.quat_log(pose0.q)[None, :]
    feats = None if features is None else np.asarray(features, dtype=np.float64)[None, :]
    rots, ts, traces = refine_batch(disc, feats, rot0, pose0.t[None, :], cfg, mode)
    q = rots[0] if mode == MODE_QUAT else quatgeom.quat_exp(rots[0])
    return Pose(q, ts[0]), traces[0]

"""Per-frame error metrics and before/after-refinement aggregation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quatgeom
from .config import RefineConfig
from .quatgeom import MODE_QUAT
from .refinement import RefinementTrace, refine_batch
from .scenes import FrameSample, _stack
from .training import EmptyDataset


def relative_improvement(before: float, after: float) -> float:
    """(median_before - median_after) / median_before; 0 when before == 0."""
    if before == 0.0:
        return 0.0
    return (before - after) / before


@dataclass
class Metrics:
    """Raw per-frame error arrays plus aggregates recomputable from them."""

    rot_before: np.ndarray
    trans_before: np.ndarray
    rot_after: np.ndarray
    trans_after: np.ndarray
    refined: bool
    stop_reasons: dict = field(default_factory=dict)
    traces: list[RefinementTrace] | None = None

    @property
    def n_frames(self) -> int:
        return len(self.rot_before)

    def median(self, which: str) -> float:
        return float(np.median(getattr(self, which)))

    def mean(self, which: str) -> float:
        return float(np.mean(getattr(self, which)))

    @property
    def rot_improvement(self) -> float:
        return relative_improvement(self.median("rot_before"), self.median("rot_after"))

    @property
    def trans_improvement(self) -> float:
        return relative_improvement(self.median("trans_before"), self.median("trans_after"))

    def summary(self) -> dict:
        return {
            "n_frames": self.n_frames,
            "refined": self.refined,
            "median_rot_before_deg": self.median("rot_before"),
            "median_rot_after_deg": self.median("rot_after"),
            "median_trans_before": self.median("trans_before"),
            "median_trans_after": self.median("trans_after"),
            "mean_rot_before_deg": self.mean("rot_before"),
            "mean_rot_after_deg": self.mean("rot_after"),
            "mean_trans_before": self.mean("trans_before"),
            "mean_trans_after": self.mean("trans_after"),
            "rot_improvement": self.rot_improvement,
            "trans_improvement": self.trans_improvement,
            "stop_reasons": dict(self.stop_reasons),
        }


def _errors(poses, samples) -> tuple[np.ndarray, np.ndarray]:
    rot = np.array([quatgeom.rotation_error_deg(p.q, s.pose_gt.q) for p, s in zip(poses, samples)])
    trans = np.array([quatgeom.translation_error(p.t, s.pose_gt.t) for p, s in zip(poses, samples)])
    return rot, trans


def evaluate(
    regressor,
    samples: list[FrameSample],
    *,
    disc=None,
    refine: RefineConfig | None = None,
    collect_traces: bool = False,
    features_override: np.ndarray | None = None,
) -> Metrics:
    """Regress every frame, optionally refine, and report error arrays.

    Without a refine config the after-arrays equal the before-arrays.
    features_override substitutes the features fed to the discriminator
    (used by the extractor ablation).
    """
    if not samples:
        raise EmptyDataset("evaluation split is empty")
    _, _, obs, feat = _stack(samples)
    if features_override is not None:
        feat = np.asarray(features_override, dtype=np.float64)
    reg = regressor.regress(obs, degenerate="identity")
    rot_b, trans_b = _errors(reg.poses, samples)

    if refine is None or disc is None:
        return Metrics(
            rot_before=rot_b,
            trans_before=trans_b,
            rot_after=rot_b.copy(),
            trans_after=trans_b.copy(),
            refined=False,
        )

    disc_feats = feat if disc.use_features else None
    rots, ts, traces = refine_batch(disc, disc_feats, reg.rot, reg.t, refine, regressor.mode)
    if regressor.mode == MODE_QUAT:
        poses_after = [quatgeom.Pose(rots[i], ts[i]) for i in range(len(rots))]
    else:
        poses_after = [quatgeom.Pose(quatgeom.quat_exp(rots[i]), ts[i]) for i in range(len(rots))]
    rot_a, trans_a = _errors(poses_after, samples)
    reasons: dict[str, int] = {}
    for tr in traces:
        reasons[tr.stop_reason] = reasons.get(tr.stop_reason, 0) + 1
    return Metrics(
        rot_before=rot_b,
        trans_before=trans_b,
        rot_after=rot_a,
        trans_after=trans_a,
        refined=True,
        stop_reasons=reasons,
        traces=traces if collect_traces else None,
    )


def discriminator_accuracy(regressor, disc, samples: list[FrameSample], *, features_override=None) -> dict:
    """Held-out accuracy: real scored > 0.5, regressed (fake) scored < 0.5."""
    if not samples:
        raise EmptyDataset("evaluation split is empty")
    q_gt, t_gt, obs, feat = _stack(samples)
    if features_override is not None:
        feat = np.asarray(features_override, dtype=np.float64)
    from .autodiff import constant  # local import to keep module deps flat
    from .training import _gt_rotations

    reg = regressor.regress(obs, degenerate="identity")
    gt_vec = np.concatenate((_gt_rotations(q_gt, regressor.mode), t_gt), axis=1)
    fake_vec = np.concatenate((reg.rot, reg.t), axis=1)
    f = constant(feat) if disc.use_features else None
    p_real = disc.forward(f, constant(gt_vec)).data
    p_fake = disc.forward(f, constant(fake_vec)).data
    real = float(np.mean(p_real > 0.5))
    fake = float(np.mean(p_fake < 0.5))
    return {"real": real, "fake": fake, "mean": 0.5 * (real + fake)}

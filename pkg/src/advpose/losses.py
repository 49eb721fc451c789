"""The four training/refinement losses.

All functions accept single samples (rank-1) or mini-batches (rank-2, one
row per sample) and reduce to a scalar by averaging over the batch.
Ground-truth arrays enter as constants; "detached" predictions are plain
arrays, so no gradient ever reaches the network that produced them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, bce, concat, constant, l1_rows, neg, texp, tmean
from .quatgeom import MODE_QUAT


def align_hemisphere(q_pred: np.ndarray, q_gt: np.ndarray) -> np.ndarray:
    """Flip ground-truth quaternion rows onto the predicted hemisphere.

    The double cover makes the l1 rotation distance ambiguous; aligning
    sign(<q_pred, q_gt>) >= 0 resolves it. Piecewise constant in the
    prediction, so it contributes no gradient.
    """
    sign = np.sign(np.sum(q_pred * q_gt, axis=1))
    sign[sign == 0.0] = 1.0
    return q_gt * sign[:, None]


def _rows(x) -> Tensor:
    if isinstance(x, Tensor):
        return x if x.ndim == 2 else Tensor(np.atleast_2d(x.data), x.requires_grad)
    return constant(np.atleast_2d(np.asarray(x, dtype=np.float64)))


def pose_loss(rot_pred, t_pred, rot_gt, t_gt, beta: Tensor, alpha: Tensor, mode: str) -> Tensor:
    """|t - t_hat| e^-beta + beta + |q - q_hat| e^-alpha + alpha, l1 norms.

    beta and alpha are trainable scalars balancing the two distances; the
    batch reduces by mean.
    """
    rot_pred = _rows(rot_pred)
    t_pred = _rows(t_pred)
    rot_gt = np.atleast_2d(np.asarray(rot_gt, dtype=np.float64))
    t_gt = np.atleast_2d(np.asarray(t_gt, dtype=np.float64))
    if mode == MODE_QUAT:
        rot_gt = align_hemisphere(rot_pred.data, rot_gt)
    r_t = l1_rows(t_pred, constant(t_gt))
    r_q = l1_rows(rot_pred, constant(rot_gt))
    per_sample = r_t * texp(neg(beta)) + beta + r_q * texp(neg(alpha)) + alpha
    return tmean(per_sample)


@dataclass
class DiscLossOut:
    total: Tensor
    p_real: Tensor
    p_fake: Tensor

    def accuracy(self) -> tuple[float, float]:
        """Fraction of real scored > 0.5 and of fake scored < 0.5."""
        real = float(np.mean(np.atleast_1d(self.p_real.data) > 0.5))
        fake = float(np.mean(np.atleast_1d(self.p_fake.data) < 0.5))
        return real, fake


def disc_loss(disc, features, pose_gt_vec, pose_pred_vec) -> DiscLossOut:
    """bce(D(f, p), 1) + bce(D(f, p_hat), 0); p_hat enters as a constant."""
    f = None if features is None else _rows(features)
    p_real = disc.forward(f, _rows(pose_gt_vec))
    p_fake = disc.forward(f, _rows(pose_pred_vec))
    total = bce(p_real, 1.0) + bce(p_fake, 0.0)
    return DiscLossOut(total=total, p_real=p_real, p_fake=p_fake)


@dataclass
class GenLossOut:
    total: Tensor
    pose: Tensor
    adv: Tensor | None
    rot_pred: Tensor
    t_pred: Tensor

    @property
    def adv_value(self) -> float | None:
        return None if self.adv is None else self.adv.item()


def gen_loss(regressor, disc, features, observations, rot_gt, t_gt, lam: float) -> GenLossOut:
    """Pose loss plus lam * bce(D(f, p_hat), 1).

    With lam == 0 the adversarial branch is skipped entirely, so the
    regressor update is bit-identical to pure pose-loss training (the Base
    Model). The discriminator's weights receive no update from this loss.
    """
    obs = constant(np.atleast_2d(np.asarray(observations, dtype=np.float64)))
    rot, t = regressor.predict(obs)
    lp = pose_loss(rot, t, rot_gt, t_gt, regressor.beta, regressor.alpha, regressor.mode)
    if lam == 0.0:
        return GenLossOut(total=lp, pose=lp, adv=None, rot_pred=rot, t_pred=t)
    if disc is None:
        raise ValueError("adversarial weight is nonzero but no discriminator was given")
    adv = bce(disc.forward(_rows(features), concat(rot, t)), 1.0)
    return GenLossOut(total=lp + float(lam) * adv, pose=lp, adv=adv, rot_pred=rot, t_pred=t)


def refinement_loss(disc, features, pose_vec: Tensor, target: float, reduction: str = "sum"):
    """bce(D(f, p_hat), c) with the confusion target c (0.5 by default).

    Sum reduction keeps each frame's gradient identical to a single-frame
    call, which batched refinement relies on. Returns (loss, disc output).
    """
    f = None if features is None else _rows(features)
    p = disc.forward(f, pose_vec)
    return bce(p, target, reduction=reduction), p

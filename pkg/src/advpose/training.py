"""Adversarial training of the pose regressor and discriminator.

Phase 1 (warm-up) trains the regressor on the pose loss alone. Phase 2
alternates per mini-batch: one regressor step on the generator loss, then
`disc_steps` discriminator steps on the discriminator loss, each network
with its own Adam state. Batch order is keyed by (seed, epoch), so a run
checkpointed after any epoch resumes bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import scenes
from .autodiff import NonFiniteValue, Tape, backward
from .config import TrainConfig
from .losses import disc_loss, gen_loss
from .models import PoseDiscriminator, PoseRegressor
from .optim import AdamState, adam_step
from .quatgeom import MODE_QUAT, quat_log
from .serialize import read_container, write_container

CHECKPOINT_KIND = "pose-adv-checkpoint"
CHECKPOINT_VERSION = 1


class EmptyDataset(ValueError):
    pass


class NonFiniteLoss(ArithmeticError):
    """Training hit NaN/Inf; message carries the offending epoch and batch."""


@dataclass
class TrainState:
    regressor: PoseRegressor
    disc: PoseDiscriminator
    opt_r: AdamState
    opt_d: AdamState
    cfg: TrainConfig
    next_epoch: int = 0
    log: list[dict] = field(default_factory=list)


def _gt_rotations(q_rows: np.ndarray, mode: str) -> np.ndarray:
    if mode == MODE_QUAT:
        return q_rows
    return np.stack([quat_log(q) for q in q_rows])


def init_state(dataset: scenes.Dataset, cfg: TrainConfig) -> TrainState:
    obs_dim = dataset.scene.observation_dim
    d_f = dataset.extractor.feature_dim
    regressor = PoseRegressor(
        obs_dim, cfg.mode, trunk=cfg.trunk, beta0=cfg.beta0, alpha0=cfg.alpha0, seed=[cfg.seed, 11]
    )
    disc = PoseDiscriminator(d_f, cfg.mode, widths=cfg.disc_widths, seed=[cfg.seed, 12])
    return TrainState(
        regressor=regressor,
        disc=disc,
        opt_r=AdamState.for_store(regressor.store, cfg.lr),
        opt_d=AdamState.for_store(disc.store, cfg.lr),
        cfg=cfg,
    )


def train(
    dataset: scenes.Dataset,
    cfg: TrainConfig,
    *,
    state: TrainState | None = None,
    stop_after_epoch: int | None = None,
    epoch_callback=None,
) -> TrainState:
    """Run (or resume) training up to cfg.total_epochs.

    Returns the final state; state.log holds one record per completed epoch
    with mean pose/adversarial/discriminator losses, the real/fake
    discriminator accuracy and the current beta/alpha values.
    """
    cfg.validate()
    if not dataset.train:
        raise EmptyDataset("training split is empty")
    if state is None:
        state = init_state(dataset, cfg)

    q_gt, t_gt, obs, feat = scenes._stack(dataset.train)
    rot_gt = _gt_rotations(q_gt, cfg.mode)
    n = len(dataset.train)
    warmup = cfg.resolved_warmup()
    last = cfg.total_epochs if stop_after_epoch is None else min(cfg.total_epochs, stop_after_epoch)

    for epoch in range(state.next_epoch, last):
        rng = np.random.default_rng([cfg.seed, 101, epoch])
        perm = rng.permutation(n)
        adversarial = epoch >= warmup
        lam = cfg.lam if adversarial else 0.0
        pose_losses, adv_losses, d_losses, accs_real, accs_fake = [], [], [], [], []

        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            try:
                with Tape() as tape:
                    out = gen_loss(
                        state.regressor, state.disc, feat[idx], obs[idx], rot_gt[idx], t_gt[idx], lam
                    )
                grads = backward(out.total, tape)
                adam_step(state.regressor.store, grads, state.opt_r)

                if adversarial:
                    pred = state.regressor.regress(obs[idx])
                    fake_vec = np.concatenate((pred.rot, pred.t), axis=1)
                    gt_vec = np.concatenate((rot_gt[idx], t_gt[idx]), axis=1)
                    for _ in range(cfg.disc_steps):
                        with Tape() as tape_d:
                            dl = disc_loss(state.disc, feat[idx], gt_vec, fake_vec)
                        grads_d = backward(dl.total, tape_d)
                        adam_step(state.disc.store, grads_d, state.opt_d)
                    d_losses.append(dl.total.item())
                    real_acc, fake_acc = dl.accuracy()
                    accs_real.append(real_acc)
                    accs_fake.append(fake_acc)
            except NonFiniteValue as e:
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}") from e

            pose_losses.append(out.pose.item())
            if out.adv is not None:
                adv_losses.append(out.adv.item())

        entry = {
            "epoch": epoch,
            "phase": "adversarial" if adversarial else "warmup",
            "L_pose": float(np.mean(pose_losses)),
            "L_adv": float(np.mean(adv_losses)) if adv_losses else None,
            "L_D": float(np.mean(d_losses)) if d_losses else None,
            "disc_acc_real": float(np.mean(accs_real)) if accs_real else None,
            "disc_acc_fake": float(np.mean(accs_fake)) if accs_fake else None,
            "beta": state.regressor.beta.item(),
            "alpha": state.regressor.alpha.item(),
        }
        state.log.append(entry)
        state.next_epoch = epoch + 1
        if epoch_callback is not None:
            epoch_callback(state)
    return state


def train_discriminator_only(
    features: np.ndarray | None,
    gt_vecs: np.ndarray,
    fake_vecs: np.ndarray,
    cfg: TrainConfig,
    *,
    feature_dim: int,
    use_features: bool = True,
    epochs: int,
    seed,
) -> PoseDiscriminator:
    """Fit a fresh discriminator against fixed real/fake pose pairs.

    Used by the extractor ablation, where the regressor is frozen and only
    the discriminator is retrained per arm.
    """
    disc = PoseDiscriminator(feature_dim, cfg.mode, widths=cfg.disc_widths, use_features=use_features, seed=seed)
    opt = AdamState.for_store(disc.store, cfg.lr)
    n = len(gt_vecs)
    for epoch in range(epochs):
        perm = np.random.default_rng([cfg.seed, 202, epoch]).permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            f = None if features is None else features[idx]
            with Tape() as tape:
                dl = disc_loss(disc, f, gt_vecs[idx], fake_vecs[idx])
            adam_step(disc.store, backward(dl.total, tape), opt)
    return disc


def _cfg_to_meta(cfg: TrainConfig) -> dict:
    return {
        "mode": cfg.mode,
        "lam": cfg.lam,
        "lr": cfg.lr,
        "batch_size": cfg.batch_size,
        "total_epochs": cfg.total_epochs,
        "warmup_epochs": cfg.warmup_epochs,
        "disc_steps": cfg.disc_steps,
        "beta0": cfg.beta0,
        "alpha0": cfg.alpha0,
        "seed": cfg.seed,
        "trunk": list(cfg.trunk),
        "disc_widths": list(cfg.disc_widths),
    }


def _cfg_from_meta(meta: dict) -> TrainConfig:
    return TrainConfig(
        mode=meta["mode"],
        lam=meta["lam"],
        lr=meta["lr"],
        batch_size=meta["batch_size"],
        total_epochs=meta["total_epochs"],
        warmup_epochs=meta["warmup_epochs"],
        disc_steps=meta["disc_steps"],
        beta0=meta["beta0"],
        alpha0=meta["alpha0"],
        seed=meta["seed"],
        trunk=tuple(meta["trunk"]),
        disc_widths=tuple(meta["disc_widths"]),
    )


def save_checkpoint(path, state: TrainState) -> None:
    """Versioned container: header carries the mode/architecture/epoch, the
    payload the named parameter and optimizer-moment arrays (see README)."""
    meta = {
        "mode": state.cfg.mode,
        "epoch": state.next_epoch,
        "cfg": _cfg_to_meta(state.cfg),
        "regressor_arch": state.regressor.arch(),
        "disc_arch": state.disc.arch(),
        "opt_r_step": state.opt_r.step,
        "opt_d_step": state.opt_d.step,
        "log": state.log,
    }
    arrays = []
    for prefix, store in (("reg", state.regressor.store), ("disc", state.disc.store)):
        arrays += [(f"{prefix}/{name}", t.data) for name, t in store.items()]
    for prefix, opt in (("opt_r", state.opt_r), ("opt_d", state.opt_d)):
        arrays += [(f"{prefix}/m/{name}", opt.m[name]) for name in sorted(opt.m)]
        arrays += [(f"{prefix}/v/{name}", opt.v[name]) for name in sorted(opt.v)]
    write_container(path, CHECKPOINT_KIND, CHECKPOINT_VERSION, meta, arrays)


def load_checkpoint(path) -> TrainState:
    meta, arrays = read_container(path, CHECKPOINT_KIND, CHECKPOINT_VERSION)
    cfg = _cfg_from_meta(meta["cfg"])
    reg_arch = meta["regressor_arch"]
    disc_arch = meta["disc_arch"]
    regressor = PoseRegressor(
        reg_arch["obs_dim"], reg_arch["mode"], trunk=reg_arch["trunk"], seed=0
    )
    disc = PoseDiscriminator(
        disc_arch["feature_dim"],
        disc_arch["mode"],
        widths=disc_arch["widths"],
        use_features=disc_arch["use_features"],
        seed=0,
    )
    for prefix, store in (("reg", regressor.store), ("disc", disc.store)):
        for name, t in store.items():
            t.data = arrays[f"{prefix}/{name}"].reshape(t.data.shape)
    opt_r = AdamState.for_store(regressor.store, cfg.lr)
    opt_d = AdamState.for_store(disc.store, cfg.lr)
    opt_r.step = int(meta["opt_r_step"])
    opt_d.step = int(meta["opt_d_step"])
    for opt, prefix, store in ((opt_r, "opt_r", regressor.store), (opt_d, "opt_d", disc.store)):
        for name, t in store.items():
            opt.m[name] = arrays[f"{prefix}/m/{name}"].reshape(t.data.shape)
            opt.v[name] = arrays[f"{prefix}/v/{name}"].reshape(t.data.shape)
    return TrainState(
        regressor=regressor,
        disc=disc,
        opt_r=opt_r,
        opt_d=opt_d,
        cfg=cfg,
        next_epoch=int(meta["epoch"]),
        log=list(meta["log"]),
    )

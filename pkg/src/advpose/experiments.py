"""Refinement sweeps, runtime benchmarks and the extractor ablation."""

from __future__ import annotations

import dataclasses
import platform
import time
from datetime import datetime, timezone

import numpy as np

from . import scenes
from .config import ExperimentConfig, RefineConfig
from .evaluation import Metrics, evaluate, relative_improvement
from .refinement import refine_batch
from .scenes import Dataset, extract_features_batch, make_extractor, _stack
from .training import TrainConfig, TrainState, train, train_discriminator_only


def sweep(
    regressor,
    disc,
    samples,
    step_sizes: list[float],
    iter_counts: list[int],
    *,
    base_refine: RefineConfig | None = None,
) -> list[dict]:
    """Full (step size x max iterations) grid of refinement outcomes.

    An iteration count of 0 means "no refinement" and reproduces the
    unrefined medians. Cells where a refined median exceeds the unrefined
    one are flagged unstable rather than failed: refinement is itself an
    optimization and may diverge for aggressive steps.
    """
    if not step_sizes or not iter_counts:
        raise ValueError("sweep grids must be non-empty")
    base = base_refine or RefineConfig()
    cells = []
    for ss in step_sizes:
        for iters in iter_counts:
            if iters == 0:
                m = evaluate(regressor, samples)
                mean_iters = 0.0
                nonmono = 0.0
                wall = 0.0
            else:
                cfg = dataclasses.replace(base, step_size=ss, max_iters=iters)
                t0 = time.perf_counter()
                m = evaluate(regressor, samples, disc=disc, refine=cfg, collect_traces=True)
                wall = (time.perf_counter() - t0) / m.n_frames
                mean_iters = float(np.mean([tr.iterations for tr in m.traces]))
                nonmono = float(np.mean([tr.nonmonotonic_steps() for tr in m.traces]))
            cells.append(
                {
                    "step_size": float(ss),
                    "max_iters": int(iters),
                    "median_rot_before_deg": m.median("rot_before"),
                    "median_rot_after_deg": m.median("rot_after"),
                    "median_trans_before": m.median("trans_before"),
                    "median_trans_after": m.median("trans_after"),
                    "mean_iters_used": mean_iters,
                    "mean_nonmonotonic_steps": nonmono,
                    "wall_clock_per_frame_s": wall,
                    "unstable_rot": m.median("rot_after") > m.median("rot_before"),
                    "unstable_trans": m.median("trans_after") > m.median("trans_before"),
                    "metrics": m,
                }
            )
    return cells


def linear_fit_r2(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares line y ~ a*x + b; returns (a, b, R^2)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    a, b = np.polyfit(x, y, 1)
    resid = y - (a * x + b)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(a), float(b), r2


def bench(
    regressor,
    disc,
    dataset: Dataset,
    iter_counts: list[int],
    *,
    refine_cfg: RefineConfig | None = None,
    repeats: int = 3,
) -> dict:
    """Per-frame wall-clock for regression, feature extraction, refinement.

    Refinement runs with tol=0 so every frame performs exactly max_iters
    iterations; the per-frame cost is fitted against the iteration count
    and the fit's R^2 is reported (the cost should be linear).
    """
    samples = dataset.test or dataset.train
    _, _, obs, _ = _stack(samples)
    n = len(samples)

    def timed(fn):
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        return best / n

    regress_time = timed(lambda: regressor.regress(obs))
    extract_time = timed(lambda: extract_features_batch(obs, dataset.extractor))

    base = refine_cfg or RefineConfig()
    reg = regressor.regress(obs)
    feats = extract_features_batch(obs, dataset.extractor)
    rows = []
    for iters in iter_counts:
        if iters == 0:
            rows.append({"iters": 0, "refine_per_frame_s": 0.0})
            continue
        cfg = dataclasses.replace(base, max_iters=int(iters), tol=0.0)
        disc_feats = feats if disc.use_features else None
        per_frame = timed(lambda cfg=cfg: refine_batch(disc, disc_feats, reg.rot, reg.t, cfg, regressor.mode))
        rows.append({"iters": int(iters), "refine_per_frame_s": per_frame})

    fit_rows = [r for r in rows if r["iters"] > 0]
    if len(fit_rows) >= 2:
        slope, intercept, r2 = linear_fit_r2(
            [r["iters"] for r in fit_rows], [r["refine_per_frame_s"] for r in fit_rows]
        )
    else:
        slope = intercept = 0.0
        r2 = 1.0
    return {
        "regression_per_frame_s": regress_time,
        "feature_extraction_per_frame_s": extract_time,
        "refinement": rows,
        "per_iteration_s": slope,
        "fit_intercept_s": intercept,
        "fit_r2": r2,
        "linear": r2 > 0.95,
        "hardware": f"{platform.platform()} / {platform.processor() or 'unknown-cpu'} / python {platform.python_version()}",
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "n_frames": n,
        "repeats": repeats,
    }


def ablate_extractor(
    dataset: Dataset,
    cfg: ExperimentConfig,
    feature_dims: list[int] | None = None,
    *,
    trained: TrainState | None = None,
) -> list[dict]:
    """Relative error decrease after refinement, per feature dimensionality.

    The regressor/discriminator pair is trained once on the dataset's own
    features; every arm then retrains only a fresh discriminator against the
    frozen regressor (arm features come from a re-seeded extractor of the
    arm's width). A pose-only arm (no features at all) is always appended.
    All arms therefore share the regressor and its unrefined baseline.
    """
    dims = list(feature_dims if feature_dims is not None else cfg.ablate.feature_dims)
    if not dims:
        raise ValueError("feature_dims must be non-empty")
    state = trained or train(dataset, cfg.train)
    regressor = state.regressor

    q_tr, t_tr, obs_tr, _ = _stack(dataset.train)
    from .training import _gt_rotations

    rot_gt = _gt_rotations(q_tr, cfg.train.mode)
    gt_vec = np.concatenate((rot_gt, t_tr), axis=1)
    pred = regressor.regress(obs_tr)
    fake_vec = np.concatenate((pred.rot, pred.t), axis=1)
    _, _, obs_te, _ = _stack(dataset.test)

    arms = [("d_f=%d" % d, d, True) for d in dims]
    if cfg.ablate.include_no_features:
        arms.append(("no-features", dataset.extractor.feature_dim, False))

    rows = []
    for label, d_f, use_features in arms:
        if use_features:
            ex = make_extractor(
                [dataset.meta.get("extractor_seed", dataset.scene.seed), d_f],
                dataset.scene.observation_dim,
                dataset.meta.get("extractor_hidden", 128),
                d_f,
            )
            feats_tr = extract_features_batch(obs_tr, ex)
            feats_te = extract_features_batch(obs_te, ex)
        else:
            feats_tr = feats_te = None
        disc = train_discriminator_only(
            feats_tr,
            gt_vec,
            fake_vec,
            cfg.train,
            feature_dim=d_f,
            use_features=use_features,
            epochs=cfg.ablate.disc_epochs,
            seed=[cfg.train.seed, 13, d_f, int(use_features)],
        )
        m: Metrics = evaluate(
            regressor,
            dataset.test,
            disc=disc,
            refine=cfg.refine,
            features_override=feats_te,
        )
        rows.append(
            {
                "arm": label,
                "feature_dim": int(d_f) if use_features else 0,
                "uses_features": use_features,
                "median_rot_before_deg": m.median("rot_before"),
                "median_rot_after_deg": m.median("rot_after"),
                "median_trans_before": m.median("trans_before"),
                "median_trans_after": m.median("trans_after"),
                "rot_decrease_pct": 100.0 * m.rot_improvement,
                "trans_decrease_pct": 100.0 * m.trans_improvement,
            }
        )
    return rows

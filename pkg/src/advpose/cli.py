"""Command-line experiment runner.

Subcommands: generate, train, eval, sweep, bench, ablate. Every command
reads a JSON experiment config, writes its artifacts into a fresh numbered
run directory under --out (append semantics; --force reuses the latest run
directory instead), and drops a manifest.json echoing the effective
configuration, input checksums and output checksums. Human-readable tables
go to stdout; every number in them is recomputable from the emitted CSV/JSONL
raw arrays.

Exit codes: 0 success, 2 invalid config or mode mismatch, 3 I/O failure
(including corrupted or newer-format files), 4 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import scenes
from .autodiff import NonFiniteValue
from .config import (
    ExperimentConfig,
    InvalidConfig,
    ModeMismatch,
    RefineConfig,
    config_to_dict,
    load_config,
)
from .evaluation import evaluate, relative_improvement
from .experiments import ablate_extractor, bench, sweep
from .quatgeom import MODES, NearZeroQuaternion
from .serialize import ChecksumMismatch, FormatVersionMismatch, sha256_file
from .training import NonFiniteLoss, load_checkpoint, save_checkpoint, train

DEFAULT_SWEEP_STEPS = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2]
DEFAULT_SWEEP_ITERS = [5, 10, 20, 30, 50]
DEFAULT_BENCH_ITERS = [5, 10, 20, 30, 50]


def _run_dir(base: Path, cmd: str, force: bool) -> Path:
    base.mkdir(parents=True, exist_ok=True)
    existing = sorted(p for p in base.glob(f"{cmd}-[0-9][0-9][0-9][0-9]") if p.is_dir())
    if force and existing:
        return existing[-1]
    n = 1
    if existing:
        n = int(existing[-1].name.rsplit("-", 1)[1]) + 1
    path = base / f"{cmd}-{n:04d}"
    path.mkdir()
    return path


def _write_manifest(run_dir: Path, command: str, cfg_dict: dict, inputs: dict, outputs: list[Path], extra=None):
    manifest = {
        "command": command,
        "config": cfg_dict,
        "inputs": {name: {"path": str(p), "sha256": sha256_file(p)} for name, p in inputs.items()},
        "outputs": {p.name: sha256_file(p) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    path = run_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _write_csv(path: Path, header: list[str], rows) -> Path:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)
    return path


def _histogram_csv(path: Path, before: np.ndarray, after: np.ndarray, bins: int = 20) -> Path:
    hi = max(float(before.max()), float(after.max()), 1e-12)
    edges = np.linspace(0.0, hi, bins + 1)
    hb, _ = np.histogram(before, bins=edges)
    ha, _ = np.histogram(after, bins=edges)
    rows = [(edges[i], edges[i + 1], int(hb[i]), int(ha[i])) for i in range(bins)]
    return _write_csv(path, ["bin_lo", "bin_hi", "count_before", "count_after"], rows)


def _load_cfg(args) -> ExperimentConfig:
    if args.config is None:
        raise InvalidConfig("--config PATH is required for this command")
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.scene.seed = args.seed
        cfg.train.seed = args.seed
    if getattr(args, "mode", None) is not None:
        cfg.train.mode = args.mode
    if getattr(args, "step_size", None) is not None:
        cfg.refine.step_size = args.step_size
    if getattr(args, "max_iters", None) is not None and isinstance(args.max_iters, int):
        cfg.refine.max_iters = args.max_iters
    if getattr(args, "eq7_literal", False):
        cfg.refine.eq7_literal = True
    cfg.validate()
    return cfg


def _dataset_from_cfg(cfg: ExperimentConfig):
    return scenes.build_dataset(
        cfg.scene.seed,
        cfg.scene.n_landmarks,
        cfg.scene.extent,
        cfg.scene.n_train,
        cfg.scene.n_test,
        smoothness=cfg.scene.smoothness_deg,
        obs_noise=cfg.scene.obs_noise,
        extractor_seed=cfg.scene.extractor_seed,
        extractor_hidden=cfg.scene.extractor_hidden,
        feature_dim=cfg.resolved_feature_dim(),
        frames_per_trajectory=cfg.scene.frames_per_trajectory,
        start_cone_deg=cfg.scene.start_cone_deg,
    )


def cmd_generate(args) -> int:
    cfg = _load_cfg(args)
    run_dir = _run_dir(Path(args.out or cfg.out_dir), "generate", args.force)
    ds = _dataset_from_cfg(cfg)
    out = run_dir / "dataset.bin"
    scenes.save_dataset(ds, out)
    _write_manifest(
        run_dir,
        "generate",
        config_to_dict(cfg),
        {},
        [out],
        extra={"n_train": len(ds.train), "n_test": len(ds.test), "dataset_meta": ds.meta},
    )
    print(f"dataset: {out}  ({len(ds.train)} train / {len(ds.test)} test frames)")
    return 0


def _train_log_path(run_dir: Path) -> Path:
    return run_dir / "train_log.jsonl"


def cmd_train(args) -> int:
    if args.resume_from:
        state = load_checkpoint(args.resume_from)
        cfg_train = state.cfg
        cfg_dict = {"train": dataclasses.asdict(cfg_train)}
    else:
        cfg = _load_cfg(args)
        if args.base_model:
            cfg.train.lam = 0.0
        cfg_train = cfg.train
        cfg_dict = config_to_dict(cfg)
        state = None
    ds = scenes.load_dataset(args.dataset)
    run_dir = _run_dir(Path(args.out or "runs"), "train", args.force)
    last_path = run_dir / "last.bin"

    def checkpoint_epoch(st):
        save_checkpoint(last_path, st)

    state = train(ds, cfg_train, state=state, epoch_callback=checkpoint_epoch)
    ckpt = run_dir / "checkpoint.bin"
    save_checkpoint(ckpt, state)
    log_path = _train_log_path(run_dir)
    with open(log_path, "w") as f:
        for entry in state.log:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
    _write_manifest(
        run_dir,
        "train",
        cfg_dict,
        {"dataset": Path(args.dataset)},
        [ckpt, last_path, log_path],
        extra={"epochs": state.next_epoch, "final": state.log[-1] if state.log else None},
    )
    final = state.log[-1]
    print(f"checkpoint: {ckpt}")
    print(f"epochs: {state.next_epoch}  L_pose: {final['L_pose']:.4f}  L_D: {final['L_D']}")
    return 0


def _check_mode(state, requested: str | None):
    if requested is not None and requested != state.cfg.mode:
        raise ModeMismatch(f"checkpoint is {state.cfg.mode!r} but --mode {requested!r} was requested")


def _eval_table(rows: list[tuple[str, float, float, float | None]], base_present: bool) -> str:
    header = ["metric", "Base", "Ours", "Ours+Ref."] if base_present else ["metric", "Ours", "Ours+Ref."]
    lines = ["  ".join(f"{h:>22}" for h in header)]
    for row in rows:
        cells = [row[0]] + [("-" if v is None else f"{v:.4f}") for v in row[1:]]
        lines.append("  ".join(f"{c:>22}" for c in cells))
    return "\n".join(lines)


def cmd_eval(args) -> int:
    state = load_checkpoint(args.checkpoint)
    _check_mode(state, args.mode)
    ds = scenes.load_dataset(args.dataset)
    refine = None
    if args.refine:
        refine = RefineConfig(
            step_size=args.step_size if args.step_size is not None else 1e-3,
            max_iters=args.max_iters if args.max_iters is not None else 50,
            eq7_literal=args.eq7_literal,
        )
    m = evaluate(state.regressor, ds.test, disc=state.disc, refine=refine)

    base_m = None
    if args.baseline:
        base_state = load_checkpoint(args.baseline)
        _check_mode(base_state, args.mode)
        base_m = evaluate(base_state.regressor, ds.test)

    run_dir = _run_dir(Path(args.out or "runs"), "eval", args.force)
    errors = _write_csv(
        run_dir / "errors.csv",
        ["frame", "rot_before_deg", "rot_after_deg", "trans_before", "trans_after"],
        [
            (i, m.rot_before[i], m.rot_after[i], m.trans_before[i], m.trans_after[i])
            for i in range(m.n_frames)
        ],
    )
    hist_rot = _histogram_csv(run_dir / "hist_rot.csv", m.rot_before, m.rot_after)
    hist_trans = _histogram_csv(run_dir / "hist_trans.csv", m.trans_before, m.trans_after)
    summary = m.summary()
    if base_m is not None:
        summary["base"] = base_m.summary()
    metrics_path = run_dir / "metrics.json"
    metrics_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

    rows = [
        (
            "median rot (deg)",
            base_m.median("rot_before") if base_m else None,
            m.median("rot_before"),
            m.median("rot_after"),
        ),
        (
            "median trans",
            base_m.median("trans_before") if base_m else None,
            m.median("trans_before"),
            m.median("trans_after"),
        ),
        ("rel. improvement rot %", None, None, 100.0 * m.rot_improvement),
        ("rel. improvement trans %", None, None, 100.0 * m.trans_improvement),
    ]
    if base_m is None:
        rows = [(r[0], r[2], r[3]) for r in rows]
    table = _eval_table(rows, base_m is not None)
    print(table)
    report = run_dir / "report.txt"
    report.write_text(table + "\n")
    inputs = {"checkpoint": Path(args.checkpoint), "dataset": Path(args.dataset)}
    if args.baseline:
        inputs["baseline"] = Path(args.baseline)
    _write_manifest(
        run_dir,
        "eval",
        {"refine": dataclasses.asdict(refine) if refine else None, "mode": state.cfg.mode},
        inputs,
        [errors, hist_rot, hist_trans, metrics_path, report],
        extra={"summary": summary},
    )
    return 0


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def cmd_sweep(args) -> int:
    state = load_checkpoint(args.checkpoint)
    _check_mode(state, args.mode)
    ds = scenes.load_dataset(args.dataset)
    steps = _float_list(args.step_sizes) if args.step_sizes else DEFAULT_SWEEP_STEPS
    iters = _int_list(args.max_iters) if args.max_iters else DEFAULT_SWEEP_ITERS
    base = RefineConfig(eq7_literal=args.eq7_literal)
    cells = sweep(state.regressor, state.disc, ds.test, steps, iters, base_refine=base)

    run_dir = _run_dir(Path(args.out or "runs"), "sweep", args.force)
    outputs = []
    grid_rows = []
    for i, cell in enumerate(cells):
        m = cell["metrics"]
        outputs.append(
            _write_csv(
                run_dir / f"cell_{i:03d}_errors.csv",
                ["frame", "rot_before_deg", "rot_after_deg", "trans_before", "trans_after"],
                [
                    (j, m.rot_before[j], m.rot_after[j], m.trans_before[j], m.trans_after[j])
                    for j in range(m.n_frames)
                ],
            )
        )
        grid_rows.append([cell[k] for k in _SWEEP_COLS])
    grid = _write_csv(run_dir / "sweep.csv", list(_SWEEP_COLS), grid_rows)
    outputs.append(grid)
    print(f"{'step':>10} {'iters':>6} {'rot_before':>11} {'rot_after':>11} {'unstable':>9}")
    for cell in cells:
        print(
            f"{cell['step_size']:>10.1e} {cell['max_iters']:>6d} "
            f"{cell['median_rot_before_deg']:>11.4f} {cell['median_rot_after_deg']:>11.4f} "
            f"{str(cell['unstable_rot']):>9}"
        )
    _write_manifest(
        run_dir,
        "sweep",
        {"step_sizes": steps, "iter_counts": iters, "eq7_literal": args.eq7_literal},
        {"checkpoint": Path(args.checkpoint), "dataset": Path(args.dataset)},
        outputs,
    )
    return 0


_SWEEP_COLS = (
    "step_size",
    "max_iters",
    "median_rot_before_deg",
    "median_rot_after_deg",
    "median_trans_before",
    "median_trans_after",
    "mean_iters_used",
    "mean_nonmonotonic_steps",
    "wall_clock_per_frame_s",
    "unstable_rot",
    "unstable_trans",
)


def cmd_bench(args) -> int:
    state = load_checkpoint(args.checkpoint)
    _check_mode(state, args.mode)
    ds = scenes.load_dataset(args.dataset)
    iters = _int_list(args.max_iters) if args.max_iters else DEFAULT_BENCH_ITERS
    report = bench(state.regressor, state.disc, ds, iters)

    run_dir = _run_dir(Path(args.out or "runs"), "bench", args.force)
    rows = [(r["iters"], r["refine_per_frame_s"]) for r in report["refinement"]]
    table = _write_csv(run_dir / "bench.csv", ["iters", "refine_per_frame_s"], rows)
    summary = run_dir / "bench.json"
    summary.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"regression    per frame: {report['regression_per_frame_s'] * 1e3:8.3f} ms")
    print(f"features      per frame: {report['feature_extraction_per_frame_s'] * 1e3:8.3f} ms")
    for r in report["refinement"]:
        print(f"refinement {r['iters']:3d} iters:     {r['refine_per_frame_s'] * 1e3:8.3f} ms/frame")
    print(f"per-iteration cost: {report['per_iteration_s'] * 1e3:.4f} ms, fit R^2 = {report['fit_r2']:.4f}")
    print(f"hardware: {report['hardware']}")
    _write_manifest(
        run_dir,
        "bench",
        {"iter_counts": iters},
        {"checkpoint": Path(args.checkpoint), "dataset": Path(args.dataset)},
        [table, summary],
        extra={"hardware": report["hardware"], "timestamp": report["timestamp"], "fit_r2": report["fit_r2"]},
    )
    if not report["linear"]:
        print("warning: refinement cost did not fit a line with R^2 > 0.95", file=sys.stderr)
        return 1
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    if args.dataset:
        ds = scenes.load_dataset(args.dataset)
        inputs = {"dataset": Path(args.dataset)}
    else:
        ds = _dataset_from_cfg(cfg)
        inputs = {}
    dims = _int_list(args.df_list) if args.df_list else list(cfg.ablate.feature_dims)
    rows = ablate_extractor(ds, cfg, dims)
    run_dir = _run_dir(Path(args.out or cfg.out_dir), "ablate", args.force)
    cols = [
        "arm",
        "feature_dim",
        "uses_features",
        "median_rot_before_deg",
        "median_rot_after_deg",
        "median_trans_before",
        "median_trans_after",
        "rot_decrease_pct",
        "trans_decrease_pct",
    ]
    table = _write_csv(run_dir / "ablate.csv", cols, [[r[c] for c in cols] for r in rows])
    print(f"{'arm':>14} {'rot decrease %':>15} {'trans decrease %':>17}")
    for r in rows:
        print(f"{r['arm']:>14} {r['rot_decrease_pct']:>15.2f} {r['trans_decrease_pct']:>17.2f}")
    _write_manifest(run_dir, "ablate", config_to_dict(cfg), inputs, [table], extra={"rows": rows})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advpose",
        description="Adversarial camera-pose regression and discriminator-gradient refinement.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=False):
        p.add_argument("--config", default=None, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory (default: config out_dir or ./runs)")
        p.add_argument("--force", action="store_true", help="reuse the latest run directory instead of appending")
        p.add_argument("--mode", choices=list(MODES), default=None, help="rotation parameterization")

    p = sub.add_parser("generate", help="generate a synthetic dataset file")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train regressor and discriminator")
    common(p)
    p.add_argument("dataset", help="dataset file from `generate`")
    p.add_argument("--base-model", action="store_true", help="force lambda = 0 (pose loss only)")
    p.add_argument("--resume-from", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, optionally with refinement")
    common(p)
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--refine", action="store_true", help="apply discriminator-gradient refinement")
    p.add_argument("--step-size", type=float, default=None)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--eq7-literal", action="store_true", help="use the literal (I - g g^T) g update direction")
    p.add_argument("--baseline", default=None, help="extra checkpoint for the Base column")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="refinement step-size x iteration grid")
    common(p)
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--step-sizes", default=None, help="comma-separated step sizes")
    p.add_argument("--max-iters", default=None, help="comma-separated iteration counts")
    p.add_argument("--eq7-literal", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="per-stage runtime benchmark")
    common(p)
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--max-iters", default=None, help="comma-separated iteration counts")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", help="feature-extractor dimensionality ablation")
    common(p)
    p.add_argument("dataset", nargs="?", default=None, help="dataset file (built from config when omitted)")
    p.add_argument("--df-list", default=None, help="comma-separated feature dimensionalities")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvalidConfig, ModeMismatch) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (FormatVersionMismatch, ChecksumMismatch, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (NonFiniteLoss, NonFiniteValue, NearZeroQuaternion) as e:
        print(f"error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

"""Experiment configuration: dataclasses with strict JSON (de)serialization.

A config file is a single human-readable JSON document. Parsing rejects
unknown keys and reports the offending field path, so typos never silently
fall back to defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .quatgeom import MODE_LOGQ, MODE_QUAT, MODES


class InvalidConfig(ValueError):
    pass


class ModeMismatch(ValueError):
    """Checkpoint parameterization mode conflicts with the requested one."""


@dataclass
class SceneConfig:
    seed: int = 0
    n_landmarks: int = 64
    extent: tuple[float, float, float] = (1.0, 1.0, 1.0)
    n_train: int = 512
    n_test: int = 128
    smoothness_deg: float = 8.0
    start_cone_deg: float | None = None  # None -> uniform random start orientation
    frames_per_trajectory: int = 16
    obs_noise: float = 0.0
    extractor_seed: int | None = None
    extractor_hidden: int = 128
    feature_dim: int | None = None  # None -> 70 (quat) / 60 (logq)


@dataclass
class TrainConfig:
    mode: str = MODE_QUAT
    lam: float = 1e-3
    lr: float = 1e-4
    batch_size: int = 64
    total_epochs: int = 300
    warmup_epochs: int | None = None  # None -> 10% of total_epochs
    disc_steps: int = 1  # discriminator steps per regressor step
    beta0: float = 0.0
    alpha0: float = -3.0
    seed: int = 0
    trunk: tuple[int, ...] = (128, 64)
    disc_widths: tuple[int, ...] = (32, 16)

    def resolved_warmup(self) -> int:
        if self.warmup_epochs is not None:
            return int(self.warmup_epochs)
        return max(1, self.total_epochs // 10)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise InvalidConfig(f"train.mode must be one of {MODES}, got {self.mode!r}")
        if self.lam < 0:
            raise InvalidConfig("train.lam must be >= 0")
        if self.batch_size < 1:
            raise InvalidConfig("train.batch_size must be >= 1")
        if self.total_epochs < 1:
            raise InvalidConfig("train.total_epochs must be >= 1")
        # warmup == total is allowed: the adversarial phase is simply skipped
        if self.resolved_warmup() > self.total_epochs:
            raise InvalidConfig("train.warmup_epochs must not exceed train.total_epochs")
        if self.disc_steps < 1:
            raise InvalidConfig("train.disc_steps must be >= 1")


@dataclass
class RefineConfig:
    step_size: float = 1e-3
    max_iters: int = 50
    tol: float = 1e-6
    target_label: float = 0.5
    eq7_literal: bool = False

    def validate(self) -> None:
        if self.step_size <= 0:
            raise InvalidConfig("refine.step_size must be > 0")
        if self.max_iters < 1:
            raise InvalidConfig("refine.max_iters must be >= 1")
        if not (0.0 < self.target_label < 1.0):
            raise InvalidConfig("refine.target_label must lie in (0, 1)")


@dataclass
class AblateConfig:
    feature_dims: tuple[int, ...] = (30, 70, 140)
    disc_epochs: int = 40
    include_no_features: bool = True


@dataclass
class ExperimentConfig:
    seeds: list[int]
    scene: SceneConfig = field(default_factory=SceneConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)
    out_dir: str = "runs"

    def validate(self) -> None:
        if not self.seeds:
            raise InvalidConfig("seeds must be a non-empty list")
        self.train.validate()
        self.refine.validate()

    def resolved_feature_dim(self) -> int:
        if self.scene.feature_dim is not None:
            return int(self.scene.feature_dim)
        return 70 if self.train.mode == MODE_QUAT else 60


_SECTIONS = {"scene": SceneConfig, "train": TrainConfig, "refine": RefineConfig, "ablate": AblateConfig}


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise InvalidConfig(f"{path or 'config'}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        where = f"{path}.{sorted(unknown)[0]}" if path else sorted(unknown)[0]
        raise InvalidConfig(f"unknown config field: {where}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        if f.type.startswith("tuple") and isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise InvalidConfig(f"{path or cls.__name__}: {e}") from e


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise InvalidConfig("config root must be an object")
    known = set(_SECTIONS) | {"seeds", "out_dir"}
    unknown = set(data) - known
    if unknown:
        raise InvalidConfig(f"unknown config field: {sorted(unknown)[0]}")
    if "seeds" not in data:
        raise InvalidConfig("missing required field: seeds")
    seeds = data["seeds"]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise InvalidConfig("seeds must be a non-empty list of integers")
    cfg = ExperimentConfig(
        seeds=list(seeds),
        out_dir=str(data.get("out_dir", "runs")),
        **{name: _build(cls, data.get(name, {}), name) for name, cls in _SECTIONS.items()},
    )
    cfg.validate()
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {"seeds": list(cfg.seeds), "out_dir": cfg.out_dir}
    for name in _SECTIONS:
        section = dataclasses.asdict(getattr(cfg, name))
        out[name] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in section.items()}
    return out


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError:
        raise
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise InvalidConfig(f"{path}: not valid JSON ({e})") from e
    return config_from_dict(data)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")

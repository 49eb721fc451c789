import json

import pytest

from advpose.config import (
    ExperimentConfig,
    InvalidConfig,
    RefineConfig,
    SceneConfig,
    TrainConfig,
    config_from_dict,
    config_to_dict,
    load_config,
    save_config,
)


def minimal():
    return {"seeds": [0, 1, 2]}


class TestParsing:
    def test_minimal_defaults(self):
        cfg = config_from_dict(minimal())
        assert cfg.seeds == [0, 1, 2]
        assert cfg.train.batch_size == 64
        assert cfg.train.lam == 1e-3
        assert cfg.train.lr == 1e-4
        assert cfg.refine.step_size == 1e-3
        assert cfg.refine.max_iters == 50
        assert cfg.refine.target_label == 0.5

    def test_missing_seeds_named(self):
        with pytest.raises(InvalidConfig) as exc:
            config_from_dict({})
        assert "seeds" in str(exc.value)

    def test_unknown_top_level_key(self):
        with pytest.raises(InvalidConfig) as exc:
            config_from_dict({**minimal(), "sceen": {}})
        assert "sceen" in str(exc.value)

    def test_unknown_nested_key_reports_path(self):
        with pytest.raises(InvalidConfig) as exc:
            config_from_dict({**minimal(), "train": {"learning_rate": 0.1}})
        assert "train.learning_rate" in str(exc.value)

    def test_invalid_values_rejected(self):
        with pytest.raises(InvalidConfig):
            config_from_dict({**minimal(), "train": {"lam": -1.0}})
        with pytest.raises(InvalidConfig):
            config_from_dict({**minimal(), "train": {"batch_size": 0}})
        with pytest.raises(InvalidConfig):
            config_from_dict({**minimal(), "refine": {"max_iters": 0}})
        with pytest.raises(InvalidConfig):
            config_from_dict({**minimal(), "train": {"mode": "euler"}})

    def test_roundtrip_identity(self):
        cfg = ExperimentConfig(
            seeds=[3, 4],
            scene=SceneConfig(seed=9, n_landmarks=32, extent=(2.0, 1.0, 1.0)),
            train=TrainConfig(mode="logq", lam=0.01, total_epochs=50, warmup_epochs=5, trunk=(16, 8)),
            refine=RefineConfig(step_size=3e-4, max_iters=20, eq7_literal=True),
            out_dir="out",
        )
        assert config_from_dict(config_to_dict(cfg)) == cfg

    def test_file_roundtrip(self, tmp_path):
        cfg = config_from_dict({**minimal(), "train": {"total_epochs": 20, "warmup_epochs": 2}})
        path = tmp_path / "cfg.json"
        save_config(cfg, path)
        assert load_config(path) == cfg
        # the file is human-readable JSON
        assert json.loads(path.read_text())["seeds"] == [0, 1, 2]

    def test_bad_json_is_invalid_config(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(InvalidConfig):
            load_config(path)


class TestDefaults:
    def test_warmup_defaults_to_tenth(self):
        cfg = TrainConfig(total_epochs=100, warmup_epochs=None)
        assert cfg.resolved_warmup() == 10
        assert TrainConfig(total_epochs=5, warmup_epochs=None).resolved_warmup() == 1

    def test_feature_dim_default_follows_mode(self):
        quat = config_from_dict({**minimal(), "train": {"mode": "quat"}})
        logq = config_from_dict({**minimal(), "train": {"mode": "logq"}})
        assert quat.resolved_feature_dim() == 70
        assert logq.resolved_feature_dim() == 60
        explicit = config_from_dict({**minimal(), "scene": {"feature_dim": 24}})
        assert explicit.resolved_feature_dim() == 24

    def test_warmup_equal_total_allowed(self):
        cfg = config_from_dict({**minimal(), "train": {"total_epochs": 10, "warmup_epochs": 10}})
        assert cfg.train.resolved_warmup() == 10
        with pytest.raises(InvalidConfig):
            config_from_dict({**minimal(), "train": {"total_epochs": 10, "warmup_epochs": 11}})

import copy
from pathlib import Path

import pytest

from unlearnbench.config import ConfigError, config_from_dict, load_config, with_overrides

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

BASE = {
    "dataset": {"source": "synthetic", "synthetic": {"num_classes": 3, "dim": 4}},
    "forget": {"mode": "selective", "target_class": 0, "count": 5},
    "methods": [{"name": "original"}, {"name": "finetune", "train": {"epochs": 2}}],
    "seeds": [0],
}


def _cfg(**changes):
    d = copy.deepcopy(BASE)
    d.update(changes)
    return config_from_dict(d)


@pytest.mark.parametrize("name", ["m1_desk", "m2_desk", "smoke"])
def test_shipped_configs_load(name):
    cfg = load_config(CONFIGS / f"{name}.yaml")
    assert cfg.seeds and cfg.methods


def test_train_block_merges_over_training():
    cfg = _cfg(training={"epochs": 40, "learning_rate": 0.05})
    ft = cfg.methods[1].train
    assert ft.epochs == 2 and ft.learning_rate == 0.05
    assert cfg.method_train(cfg.methods[1], 7).seed == 7


def test_hash_ignores_output_dir_only():
    a = _cfg()
    assert a.config_hash() == _cfg(output_dir="elsewhere").config_hash()
    assert a.config_hash() != _cfg(seeds=[1]).config_hash()


@pytest.mark.parametrize("changes, message", [
    ({"methods": []}, "at least one method"),
    ({"seeds": []}, "at least one seed"),
    ({"suite": ["M2"]}, "requires a `confusion`"),
    ({"suite": ["M4"]}, "unknown metric suites"),
    ({"methods": [{"name": "finetune"}]}, "needs a `train` block"),
    ({"methods": [{"name": "cf_k", "train": {}}]}, "needs `k`"),
    ({"methods": [{"name": "a", "kind": "finetune", "rewind": True, "train": {}}]}, "rewinding"),
    ({"methods": [{"name": "original"}, {"name": "original"}]}, "duplicate"),
    ({"methods": [{"name": "magic"}]}, "unknown method kind"),
    ({"confusion": {"class_a": 0, "class_b": 1, "count_per_class": 2}}, "exactly one"),
    ({"bogus": 1}, "unknown top-level"),
    ({"training": {"epochs": -1}}, "invalid training config"),
    ({"methods": [{"name": "scrub", "scrub": {"max_steps": 9, "total_steps": 2}}]}, "max_steps"),
])
def test_invalid_configs(changes, message):
    with pytest.raises(ConfigError, match=message):
        _cfg(**changes)


def test_m3_with_confusion_rejected():
    d = copy.deepcopy(BASE)
    d.pop("forget")
    d["confusion"] = {"class_a": 0, "class_b": 1, "count_per_class": 2}
    d["suite"] = ["M2", "M3"]
    with pytest.raises(ConfigError, match="M3"):
        config_from_dict(d)


def test_overrides():
    cfg = with_overrides(_cfg(), seeds=[3, 4], methods=["finetune"], suite=["M1", "M3"], output_dir="x")
    assert cfg.seeds == (3, 4) and [m.name for m in cfg.methods] == ["finetune"]
    assert cfg.suite == ("M1", "M3") and cfg.output_dir == "x"
    with pytest.raises(ConfigError):
        with_overrides(_cfg(), methods=["nope"])
    with pytest.raises(ConfigError):
        with_overrides(_cfg(), suite=["M2"])


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "list.yaml")


def test_snapshot_round_trips():
    import yaml

    cfg = load_config(CONFIGS / "m1_desk.yaml")
    again = config_from_dict(yaml.safe_load(cfg.snapshot()))
    assert again.config_hash() == cfg.config_hash()


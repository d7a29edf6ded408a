"""Experiment configuration: YAML schema, validation and canonical hashing.

Schema (all sections optional except ``methods`` and ``seeds``)::

    name: m1_desk
    dataset:
      source: synthetic            # or: archive
      path: null                   # archive directory
      synthetic: {num_classes: 5, dim: 32, train_per_class: 100, ...}
    architecture: {kind: mlp, hidden: [64, 64]}    # input shape and classes come from the data
    forget: {mode: selective, target_class: 0, count: 25}
    confusion: null                # {class_a: 0, class_b: 1, count_per_class: 50}
    training: {epochs: 50, learning_rate: 0.05, batch_size: 32, ...}
    methods:
      - {name: original}
      - {name: retrain}                              # uses `training`
      - {name: finetune, train: {epochs: 10, learning_rate: 0.01}}
      - {name: neggrad, beta: 0.95, train: {...}}
      - {name: cf_k, k: 2, train: {...}}
      - {name: eu_k, k: 2}                           # uses `training` unless `train` given
      - {name: scrub, scrub: {alpha: 1.0, ...}}
      - {name: scrub_r, kind: scrub, rewind: true, scrub: {...}}
    seeds: [0, 1, 2]
    suite: [M1, M3]
    output_dir: runs

``train`` blocks are merged over ``training``; unspecified ScrubConfig fields
take the dataclass defaults. The run seed overrides every ``seed`` field.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import yaml

from .data import ConfusionSpec, ForgetSpec, SyntheticConfig
from .model import TrainConfig
from .unlearn import ScrubConfig

METHOD_KINDS = ("original", "retrain", "finetune", "neggrad", "cf_k", "eu_k", "scrub")
SUITES = ("M1", "M2", "M3")


class ConfigError(ValueError):
    pass


def _only(cls, d: dict, where: str) -> dict:
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")
    return d


@dataclass(frozen=True)
class MethodSpec:
    name: str
    kind: str
    train: Optional[TrainConfig] = None
    scrub: Optional[ScrubConfig] = None
    beta: float = 0.95
    k: Optional[int] = None
    rewind: bool = False


@dataclass(frozen=True)
class DatasetSpec:
    source: str = "synthetic"
    path: Optional[str] = None
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)


@dataclass(frozen=True)
class ExperimentConfig:
    methods: tuple
    seeds: tuple
    name: str = "experiment"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    architecture: dict = field(default_factory=lambda: {"kind": "mlp", "hidden": [64, 64]})
    forget: Optional[ForgetSpec] = None
    confusion: Optional[ConfusionSpec] = None
    training: TrainConfig = field(default_factory=TrainConfig)
    suite: tuple = ("M1",)
    output_dir: str = "runs"

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("at least one method is required")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate method names: {names}")
        bad = set(self.suite) - set(SUITES)
        if bad:
            raise ConfigError(f"unknown metric suites {sorted(bad)}")
        if (self.forget is None) == (self.confusion is None):
            raise ConfigError("exactly one of `forget` and `confusion` must be given")
        if "M2" in self.suite and self.confusion is None:
            raise ConfigError("suite M2 requires a `confusion` spec")
        if "M3" in self.suite:
            if "M2" in self.suite or self.confusion is not None:
                raise ConfigError("M3 cannot be combined with confused labels")
        for m in self.methods:
            if m.kind in ("cf_k", "eu_k") and m.k is None:
                raise ConfigError(f"method {m.name} needs `k`")
            if m.rewind and m.kind != "scrub":
                raise ConfigError(f"method {m.name}: rewinding applies to scrub only")

    def method_train(self, m: MethodSpec, seed: int) -> TrainConfig:
        return replace(m.train or self.training, seed=seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = [_drop_none(asdict(m)) for m in self.methods]
        d["seeds"] = list(self.seeds)
        d["suite"] = list(self.suite)
        return d

    def canonical_json(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def snapshot(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


def _drop_none(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


def _method(raw: dict, training: TrainConfig) -> MethodSpec:
    raw = dict(raw)
    if "name" not in raw:
        raise ConfigError(f"method entry without a name: {raw}")
    kind = raw.pop("kind", raw["name"])
    if kind not in METHOD_KINDS:
        raise ConfigError(f"unknown method kind {kind!r}")
    train_cfg = None
    if "train" in raw:
        train_cfg = TrainConfig(**{**asdict(training), **_only(TrainConfig, raw.pop("train") or {}, "train")})
    elif kind in ("finetune", "neggrad", "cf_k"):
        raise ConfigError(f"method {raw['name']} needs a `train` block")
    scrub_cfg = None
    if kind == "scrub":
        scrub_cfg = ScrubConfig(**_only(ScrubConfig, raw.pop("scrub", {}) or {}, "scrub"))
    elif "scrub" in raw:
        raise ConfigError(f"`scrub` block given for non-scrub method {raw['name']}")
    try:
        return MethodSpec(kind=kind, train=train_cfg, scrub=scrub_cfg, **raw)
    except TypeError as exc:
        raise ConfigError(f"method {raw['name']}: {exc}") from exc


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    allowed = {f.name for f in fields(ExperimentConfig)}
    if set(d) - allowed:
        raise ConfigError(f"unknown top-level keys {sorted(set(d) - allowed)}")
    try:
        training = TrainConfig(**_only(TrainConfig, d.pop("training", {}) or {}, "training"))
        ds = dict(d.pop("dataset", {}) or {})
        syn = SyntheticConfig(**_only(SyntheticConfig, ds.pop("synthetic", {}) or {}, "dataset.synthetic"))
        dataset = DatasetSpec(synthetic=syn, **_only(DatasetSpec, ds, "dataset"))
        forget = d.pop("forget", None)
        confusion = d.pop("confusion", None)
        methods = tuple(_method(m, training) for m in d.pop("methods", []) or [])
        return ExperimentConfig(
            methods=methods,
            seeds=tuple(int(s) for s in d.pop("seeds", []) or []),
            training=training,
            dataset=dataset,
            forget=ForgetSpec(**forget) if forget else None,
            confusion=ConfusionSpec(**confusion) if confusion else None,
            suite=tuple(d.pop("suite", ["M1"])),
            **d,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} does not contain a mapping")
    return config_from_dict(raw)


def with_overrides(cfg: ExperimentConfig, seeds=None, methods=None, suite=None, output_dir=None) -> ExperimentConfig:
    if methods:
        known = {m.name for m in cfg.methods}
        missing = set(methods) - known
        if missing:
            raise ConfigError(f"methods not in config: {sorted(missing)}")
        picked = tuple(m for m in cfg.methods if m.name in set(methods))
    else:
        picked = cfg.methods
    d = dict(
        methods=picked,
        seeds=tuple(seeds) if seeds else cfg.seeds,
        suite=tuple(suite) if suite else cfg.suite,
        output_dir=output_dir or cfg.output_dir,
    )
    try:
        return replace(cfg, **d)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

"""Datasets, retain/forget splits, label-confusion injection and matched validation sets.

A dataset is a frozen bundle of numpy arrays. Every example carries a stable
integer id (its position in the canonical ordering of its split) so that
partitions can be checked by identity rather than by value.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

import numpy as np

SPLITS = ("train", "validation", "test")


class DatasetError(ValueError):
    """Raised for unknown sources, unreadable archives and invalid split specs."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    split_name: str
    ids: Optional[np.ndarray] = None
    # Pre-corruption labels; only set on datasets touched by inject_confusion.
    clean_labels: Optional[np.ndarray] = None
    feature_shape: tuple = field(default=())

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats.reshape(-1, 1)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if feats.shape[0] != labels.shape[0]:
            raise DatasetError(f"{feats.shape[0]} feature rows but {labels.shape[0]} labels")
        if self.num_classes < 2:
            raise DatasetError(f"need at least 2 classes, got {self.num_classes}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise DatasetError(f"labels must lie in [0, {self.num_classes})")
        ids = np.arange(len(labels)) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if ids.shape != labels.shape:
            raise DatasetError("ids must have one entry per example")
        object.__setattr__(self, "features", _frozen(feats))
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "ids", _frozen(ids))
        if self.clean_labels is not None:
            object.__setattr__(self, "clean_labels", _frozen(np.asarray(self.clean_labels, dtype=np.int64)))
        shape = tuple(self.feature_shape) or (feats.shape[1],)
        if int(np.prod(shape)) != feats.shape[1]:
            raise DatasetError(f"feature_shape {shape} does not match {feats.shape[1]} features")
        object.__setattr__(self, "feature_shape", shape)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def true_labels(self) -> np.ndarray:
        """Labels before any confusion was injected."""
        return self.labels if self.clean_labels is None else self.clean_labels

    def keys(self) -> set[tuple[str, int]]:
        return {(self.split_name, int(i)) for i in self.ids}

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, index) -> "LabeledDataset":
        index = np.asarray(index)
        if index.size == 0:
            index = index.astype(np.int64)
        return LabeledDataset(
            features=self.features[index],
            labels=self.labels[index],
            num_classes=self.num_classes,
            split_name=self.split_name,
            ids=self.ids[index],
            clean_labels=None if self.clean_labels is None else self.clean_labels[index],
            feature_shape=self.feature_shape,
        )

    def with_labels(self, labels: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(
            self.features, labels, self.num_classes, self.split_name, self.ids,
            clean_labels=self.true_labels, feature_shape=self.feature_shape,
        )

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for a in (self.features, self.labels, self.ids):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update(f"{self.num_classes}:{self.split_name}".encode())
        return h.hexdigest()


def concat(parts: list[LabeledDataset]) -> LabeledDataset:
    first = parts[0]
    clean = None
    if any(p.clean_labels is not None for p in parts):
        clean = np.concatenate([p.true_labels for p in parts])
    return LabeledDataset(
        features=np.concatenate([p.features for p in parts]),
        labels=np.concatenate([p.labels for p in parts]),
        num_classes=first.num_classes,
        split_name=first.split_name,
        ids=np.concatenate([p.ids for p in parts]),
        clean_labels=clean,
        feature_shape=first.feature_shape,
    )


def sort_by_id(ds: LabeledDataset) -> LabeledDataset:
    return ds.subset(np.argsort(ds.ids, kind="stable"))


@dataclass(frozen=True)
class ForgetSpec:
    mode: Literal["class", "selective"]
    target_class: int
    count: Optional[int] = None

    def validate(self, train: LabeledDataset) -> None:
        if self.mode not in ("class", "selective"):
            raise DatasetError(f"unknown forget mode {self.mode!r}")
        if not 0 <= self.target_class < train.num_classes:
            raise DatasetError(f"target class {self.target_class} outside [0, {train.num_classes})")
        available = int(np.sum(train.labels == self.target_class))
        if available == 0:
            raise DatasetError(f"class {self.target_class} has no training examples")
        if self.mode == "selective":
            if self.count is None or self.count < 1:
                raise DatasetError("selective mode needs a positive count")
            if self.count > available:
                raise DatasetError(
                    f"cannot forget {self.count} examples of class {self.target_class}; only {available} exist"
                )


@dataclass(frozen=True)
class ConfusionSpec:
    class_a: int
    class_b: int
    count_per_class: int

    def validate(self, train: LabeledDataset) -> None:
        if self.class_a == self.class_b:
            raise DatasetError("confused classes must differ")
        for c in (self.class_a, self.class_b):
            if not 0 <= c < train.num_classes:
                raise DatasetError(f"class {c} outside [0, {train.num_classes})")
        if self.count_per_class < 0:
            raise DatasetError("count_per_class must be nonnegative")
        counts = train.class_counts()
        limit = min(counts[self.class_a], counts[self.class_b])
        if self.count_per_class > limit:
            raise DatasetError(f"count_per_class {self.count_per_class} exceeds available {limit}")


@dataclass(frozen=True)
class SyntheticConfig:
    """Gaussian blobs: each class is a mixture of `modes_per_class` isotropic clusters."""

    num_classes: int = 5
    dim: int = 32
    train_per_class: int = 100
    val_per_class: int = 25
    test_per_class: int = 100
    modes_per_class: int = 1
    center_scale: float = 1.0
    noise: float = 1.0


def make_blobs(cfg: SyntheticConfig, seed: int) -> dict[str, LabeledDataset]:
    if cfg.num_classes < 2:
        raise DatasetError(f"need at least 2 classes, got {cfg.num_classes}")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, cfg.center_scale, size=(cfg.num_classes, cfg.modes_per_class, cfg.dim))
    out = {}
    for split, per_class in zip(SPLITS, (cfg.train_per_class, cfg.val_per_class, cfg.test_per_class)):
        labels = np.repeat(np.arange(cfg.num_classes), per_class)
        modes = rng.integers(0, cfg.modes_per_class, size=labels.size)
        feats = centers[labels, modes] + rng.normal(0.0, cfg.noise, size=(labels.size, cfg.dim))
        order = rng.permutation(labels.size)
        out[split] = LabeledDataset(feats[order], labels[order], cfg.num_classes, split)
    return out


# Archive layout: <dir>/{train,validation,test}.{npz,csv}.
# npz: arrays `features` (N x ...), `labels` (N,), optional `num_classes`.
# csv: header `label,f0,f1,...`, one example per row.
def save_archive(splits: dict[str, LabeledDataset], path, fmt: str = "npz") -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for name, ds in splits.items():
        if fmt == "npz":
            feats = ds.features.reshape((len(ds),) + ds.feature_shape)
            with open(path / f"{name}.npz", "wb") as fh:
                np.savez(fh, features=feats, labels=ds.labels, num_classes=np.int64(ds.num_classes))
        elif fmt == "csv":
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["label"] + [f"f{j}" for j in range(ds.features.shape[1])])
            for x, y in zip(ds.features, ds.labels):
                w.writerow([int(y)] + [repr(float(v)) for v in x])
            (path / f"{name}.csv").write_text(buf.getvalue())
        else:
            raise DatasetError(f"unknown archive format {fmt!r}")


def _read_split(path: Path, name: str):
    npz, txt = path / f"{name}.npz", path / f"{name}.csv"
    try:
        if npz.exists():
            with np.load(npz, allow_pickle=False) as z:
                feats = np.asarray(z["features"], dtype=np.float64)
                labels = np.asarray(z["labels"], dtype=np.int64)
                k = int(z["num_classes"]) if "num_classes" in z.files else None
            shape = feats.shape[1:]
            return feats.reshape(len(feats), -1), labels, k, shape
        if txt.exists():
            rows = list(csv.reader(txt.read_text().splitlines()))
            if not rows or rows[0][0] != "label":
                raise DatasetError(f"{txt} lacks a `label` header column")
            body = np.array(rows[1:], dtype=np.float64).reshape(len(rows) - 1, len(rows[0]))
            return body[:, 1:], body[:, 0].astype(np.int64), None, (body.shape[1] - 1,)
    except DatasetError:
        raise
    except Exception as exc:
        raise DatasetError(f"corrupted archive split {name!r} in {path}: {exc}") from exc
    raise DatasetError(f"archive {path} has no {name} split")


def load_dataset(source: str, seed: int = 0, path=None, synthetic: SyntheticConfig | None = None) -> dict[str, LabeledDataset]:
    """Return ``{"train", "validation", "test"}`` splits for `source`.

    `source` is ``"synthetic"`` (Gaussian blobs configured by `synthetic`) or
    ``"archive"`` (a directory at `path`, see :func:`save_archive`).
    """
    if source == "synthetic":
        return make_blobs(synthetic or SyntheticConfig(), seed)
    if source != "archive":
        raise DatasetError(f"unknown dataset source {source!r}")
    if path is None:
        raise DatasetError("archive source needs a path")
    path = Path(path)
    raw = {name: _read_split(path, name) for name in SPLITS}
    declared = {k for _, _, k, _ in raw.values() if k is not None}
    num_classes = max(declared) if declared else int(max(r[1].max() for r in raw.values() if r[1].size)) + 1
    if num_classes < 2:
        raise DatasetError(f"need at least 2 classes, got {num_classes}")
    return {
        name: LabeledDataset(feats, labels, num_classes, name, feature_shape=shape)
        for name, (feats, labels, _, shape) in raw.items()
    }


def split_retain_forget(train: LabeledDataset, spec: ForgetSpec, seed: int = 0) -> tuple[LabeledDataset, LabeledDataset]:
    spec.validate(train)
    candidates = np.flatnonzero(train.labels == spec.target_class)
    if spec.mode == "class":
        chosen = candidates
    else:
        rng = np.random.default_rng(seed)
        chosen = np.sort(rng.choice(candidates, size=spec.count, replace=False))
    mask = np.zeros(len(train), dtype=bool)
    mask[chosen] = True
    return train.subset(np.flatnonzero(~mask)), train.subset(np.flatnonzero(mask))


def inject_confusion(train: LabeledDataset, spec: ConfusionSpec, seed: int = 0):
    """Swap labels of `count_per_class` examples between the two classes.

    Returns ``(confused_train, forget, retain)``; `forget` holds exactly the
    mislabeled examples with their corrupted labels.
    """
    spec.validate(train)
    rng = np.random.default_rng(seed)
    labels = train.labels.copy()
    flipped = []
    for src, dst in ((spec.class_a, spec.class_b), (spec.class_b, spec.class_a)):
        pool = np.flatnonzero(train.labels == src)
        pick = np.sort(rng.choice(pool, size=spec.count_per_class, replace=False))
        labels[pick] = dst
        flipped.append(pick)
    confused = train.with_labels(labels)
    mask = np.zeros(len(train), dtype=bool)
    mask[np.concatenate(flipped)] = True
    return confused, confused.subset(np.flatnonzero(mask)), confused.subset(np.flatnonzero(~mask))


def build_matched_validation(
    validation: LabeledDataset,
    forget: LabeledDataset,
    retain: LabeledDataset | None = None,
    holdout_per_class: int = 25,
    seed: int = 0,
) -> LabeledDataset:
    """Keep the validation examples whose class occurs in the forget set.

    Class membership comes from clean labels, so a confused forget set matches
    the classes its examples really belong to. If validation has none of
    those classes, up to `holdout_per_class` examples per class are drawn from
    `retain` instead.
    """
    if len(validation) == 0:
        raise DatasetError("validation set is empty")
    classes = np.unique(forget.true_labels)
    matched = validation.subset(np.flatnonzero(np.isin(validation.true_labels, classes)))
    if len(matched):
        return matched
    if retain is not None:
        rng = np.random.default_rng(seed)
        picks = []
        for c in classes:
            pool = np.flatnonzero(retain.true_labels == c)
            if pool.size:
                picks.append(rng.choice(pool, size=min(holdout_per_class, pool.size), replace=False))
        if picks:
            return retain.subset(np.sort(np.concatenate(picks)))
    raise DatasetError(f"no validation or retain examples of forget classes {classes.tolist()}")

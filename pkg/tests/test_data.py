import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unlearnbench.data import (
    ConfusionSpec,
    DatasetError,
    ForgetSpec,
    LabeledDataset,
    SyntheticConfig,
    build_matched_validation,
    concat,
    inject_confusion,
    load_dataset,
    make_blobs,
    save_archive,
    split_retain_forget,
)


def _ids(ds):
    return sorted(int(i) for i in ds.ids)


def test_synthetic_split_sizes_five_classes():
    splits = load_dataset("synthetic", seed=0)
    assert [len(splits[s]) for s in ("train", "validation", "test")] == [500, 125, 500]
    for s in splits.values():
        assert set(np.unique(s.labels)) == set(range(5))


def test_synthetic_two_class_sizes():
    cfg = SyntheticConfig(num_classes=2, dim=3, train_per_class=10, val_per_class=2, test_per_class=10)
    splits = load_dataset("synthetic", seed=1, synthetic=cfg)
    assert [len(splits[s]) for s in ("train", "validation", "test")] == [20, 4, 20]
    assert all(set(np.unique(s.labels)) <= {0, 1} for s in splits.values())


def test_synthetic_deterministic_and_seed_sensitive():
    a, b, c = (load_dataset("synthetic", seed=s) for s in (3, 3, 4))
    for name in a:
        assert a[name].fingerprint() == b[name].fingerprint()
        assert a[name].fingerprint() != c[name].fingerprint()


def test_splits_are_disjoint():
    splits = load_dataset("synthetic", seed=0)
    keys = [s.keys() for s in splits.values()]
    assert not (keys[0] & keys[1] or keys[0] & keys[2] or keys[1] & keys[2])


def test_unknown_source_and_too_few_classes(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset("imagenet")
    with pytest.raises(DatasetError):
        load_dataset("synthetic", synthetic=SyntheticConfig(num_classes=1))
    one_class = {s: (np.zeros((3, 2)), np.zeros(3, dtype=int)) for s in ("train", "validation", "test")}
    for name, (x, y) in one_class.items():
        np.savez(tmp_path / f"{name}.npz", features=x, labels=y)
    with pytest.raises(DatasetError):
        load_dataset("archive", path=tmp_path)


@pytest.mark.parametrize("fmt", ["npz", "csv"])
def test_archive_round_trip(tmp_path, fmt):
    splits = make_blobs(SyntheticConfig(num_classes=3, dim=4, train_per_class=5, val_per_class=2, test_per_class=3), 0)
    save_archive(splits, tmp_path, fmt)
    back = load_dataset("archive", path=tmp_path)
    for name, ds in splits.items():
        np.testing.assert_array_equal(back[name].features, ds.features)
        np.testing.assert_array_equal(back[name].labels, ds.labels)
        assert back[name].num_classes == 3


def test_archive_keeps_image_shape(tmp_path):
    x = np.arange(2 * 4 * 1 * 3 * 3, dtype=float).reshape(8, 1, 3, 3)
    y = np.array([0, 1] * 4)
    for name in ("train", "validation", "test"):
        np.savez(tmp_path / f"{name}.npz", features=x, labels=y)
    ds = load_dataset("archive", path=tmp_path)["train"]
    assert ds.feature_shape == (1, 3, 3) and ds.features.shape == (8, 9)


def test_corrupted_and_missing_archive(tmp_path):
    (tmp_path / "train.npz").write_bytes(b"not an archive")
    with pytest.raises(DatasetError, match="corrupted"):
        load_dataset("archive", path=tmp_path)
    (tmp_path / "train.npz").unlink()
    with pytest.raises(DatasetError, match="no train split"):
        load_dataset("archive", path=tmp_path)


def _with_class(n_target, n_other=40, target=5, num_classes=10, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.concatenate([np.full(n_target, target), rng.choice([c for c in range(num_classes) if c != target], n_other)])
    return LabeledDataset(rng.normal(size=(labels.size, 3)), labels, num_classes, "train")


def test_class_mode_takes_every_example_of_the_class():
    train = _with_class(1000)
    retain, forget = split_retain_forget(train, ForgetSpec("class", 5))
    assert len(forget) == 1000 and np.all(forget.labels == 5)
    assert not np.any(retain.labels == 5)


def test_selective_mode_count_and_class():
    train = _with_class(300)
    retain, forget = split_retain_forget(train, ForgetSpec("selective", 5, 100), seed=2)
    assert len(forget) == 100 and np.all(forget.labels == 5)
    assert np.sum(retain.labels == 5) == 200


def test_selective_with_full_count_equals_class_mode():
    train = _with_class(37)
    _, f_sel = split_retain_forget(train, ForgetSpec("selective", 5, 37), seed=9)
    _, f_cls = split_retain_forget(train, ForgetSpec("class", 5))
    assert _ids(f_sel) == _ids(f_cls)


@pytest.mark.parametrize("spec", [
    ForgetSpec("selective", 5, 38),
    ForgetSpec("selective", 5, 0),
    ForgetSpec("class", 11),
    ForgetSpec("class", 4),  # class 4 is removed from the data below
    ForgetSpec("sideways", 5),
])
def test_invalid_forget_specs(spec):
    train = _with_class(37)
    if spec.target_class == 4:
        train = train.subset(np.flatnonzero(train.labels != 4))
    with pytest.raises(DatasetError):
        split_retain_forget(train, spec)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(1, 20), st.integers(0, 10_000), st.booleans())
def test_partition_property(num_classes, per_class, seed, selective):
    train = make_blobs(SyntheticConfig(num_classes=num_classes, dim=2, train_per_class=per_class,
                                       val_per_class=1, test_per_class=1), seed)["train"]
    target = seed % num_classes
    spec = ForgetSpec("selective", target, 1 + seed % per_class) if selective else ForgetSpec("class", target)
    retain, forget = split_retain_forget(train, spec, seed)
    assert not retain.keys() & forget.keys()
    assert _ids(concat([retain, forget])) == _ids(train)
    again = split_retain_forget(train, spec, seed)
    assert _ids(again[1]) == _ids(forget)


def _five_class_train(seed=0):
    return make_blobs(SyntheticConfig(), seed)["train"]


def test_confusion_bookkeeping_by_brute_force():
    train = _five_class_train()
    confused, forget, retain = inject_confusion(train, ConfusionSpec(0, 1, 50), seed=4)
    assert len(forget) == 100 and len(retain) == 400
    flips = {(int(a), int(b)): 0 for a in range(5) for b in range(5)}
    changed = set()
    for i in range(len(train)):
        if train.labels[i] != confused.labels[i]:
            flips[(int(train.labels[i]), int(confused.labels[i]))] += 1
            changed.add(int(train.ids[i]))
    assert flips[(0, 1)] == 50 and flips[(1, 0)] == 50
    assert sum(flips.values()) == 100
    assert changed == {int(i) for i in forget.ids}
    clean = dict(zip(train.ids.tolist(), train.labels.tolist()))
    for i, y in zip(forget.ids, forget.labels):
        assert y != clean[int(i)]
    np.testing.assert_array_equal(forget.true_labels, [clean[int(i)] for i in forget.ids])
    assert not retain.keys() & forget.keys()


def test_confusion_count_zero_is_identity():
    train = _five_class_train()
    confused, forget, retain = inject_confusion(train, ConfusionSpec(0, 1, 0))
    assert len(forget) == 0
    np.testing.assert_array_equal(confused.labels, train.labels)
    assert _ids(retain) == _ids(train)


@pytest.mark.parametrize("spec", [ConfusionSpec(0, 0, 5), ConfusionSpec(0, 7, 5), ConfusionSpec(0, 1, 101), ConfusionSpec(0, 1, -1)])
def test_invalid_confusion(spec):
    with pytest.raises(DatasetError):
        inject_confusion(_five_class_train(), spec)


def test_matched_validation_single_class():
    splits = make_blobs(SyntheticConfig(), 0)
    _, forget = split_retain_forget(splits["train"], ForgetSpec("class", 0))
    matched = build_matched_validation(splits["validation"], forget)
    assert len(matched) == 25 and np.all(matched.labels == 0)


def test_matched_validation_all_classes_is_identity():
    splits = make_blobs(SyntheticConfig(), 0)
    forget = splits["train"].subset(np.arange(50))
    assert set(forget.labels) == set(range(5))
    matched = build_matched_validation(splits["validation"], forget)
    assert _ids(matched) == _ids(splits["validation"])


def test_matched_validation_confused_uses_clean_classes():
    splits = make_blobs(SyntheticConfig(), 0)
    _, forget, _ = inject_confusion(splits["train"], ConfusionSpec(0, 1, 50))
    matched = build_matched_validation(splits["validation"], forget)
    counts = splits["validation"].class_counts()
    assert len(matched) == counts[0] + counts[1]
    assert set(matched.labels) == {0, 1}


def test_matched_validation_falls_back_to_retain_and_errors():
    splits = make_blobs(SyntheticConfig(num_classes=3, dim=2, train_per_class=40), 0)
    retain, forget = split_retain_forget(splits["train"], ForgetSpec("selective", 2, 5))
    val = splits["validation"].subset(np.flatnonzero(splits["validation"].labels != 2))
    matched = build_matched_validation(val, forget, retain, holdout_per_class=10)
    assert len(matched) == 10 and np.all(matched.labels == 2)
    assert not matched.keys() & forget.keys()
    with pytest.raises(DatasetError):
        build_matched_validation(val, forget)

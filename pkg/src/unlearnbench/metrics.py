"""Evaluation suites: error profile, class-confusion metrics, loss-based membership inference."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import StratifiedKFold

from .data import LabeledDataset
from .model import ClassifierModel, per_example_loss, predict

LOSS_CLIP = 400.0
MIA_FOLDS = 5


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # counts[a, b]: examples of true class a predicted as b

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def class_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)


def confusion_from_predictions(labels, predictions, num_classes: int) -> ConfusionMatrix:
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (np.asarray(labels), np.asarray(predictions)), 1)
    return ConfusionMatrix(counts)


def confusion_matrix(model: ClassifierModel, data: LabeledDataset) -> ConfusionMatrix:
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return confusion_from_predictions(data.labels, predict(model, data.features), model.num_classes)


def ic_err(matrix: ConfusionMatrix, class_a: int, class_b: int, data_counts=None) -> float:
    """Share of class-a and class-b examples predicted as anything else."""
    if class_a == class_b:
        raise ValueError("classes must differ")
    c = matrix.counts
    totals = matrix.class_totals() if data_counts is None else np.asarray(data_counts)
    denom = totals[class_a] + totals[class_b]
    if denom <= 0:
        raise ValueError(f"no examples of classes {class_a} or {class_b}")
    wrong = (c[class_a].sum() - c[class_a, class_a]) + (c[class_b].sum() - c[class_b, class_b])
    return float(wrong / denom)


def fgt_err(matrix: ConfusionMatrix, class_a: int, class_b: int) -> int:
    """Raw count of a->b plus b->a mistakes."""
    if class_a == class_b:
        raise ValueError("classes must differ")
    return int(matrix.counts[class_a, class_b] + matrix.counts[class_b, class_a])


@dataclass(frozen=True)
class MiaResult:
    attack_accuracy_mean: float
    attack_accuracy_std: float
    fold_accuracies: tuple
    n_forget: int
    n_test: int


def attack_dataset(forget_losses, test_losses, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Clipped, class-balanced attack features (n x 1) and membership labels (1 = forget).

    The larger side is down-sampled to the size of the smaller one.
    """
    f = np.clip(np.asarray(forget_losses, dtype=np.float64).reshape(-1), -LOSS_CLIP, LOSS_CLIP)
    t = np.clip(np.asarray(test_losses, dtype=np.float64).reshape(-1), -LOSS_CLIP, LOSS_CLIP)
    n = min(f.size, t.size)
    if n < MIA_FOLDS:
        raise ValueError(f"need at least {MIA_FOLDS} examples per side, got forget={f.size} test={t.size}")
    rng = np.random.default_rng(seed)
    if f.size > n:
        f = f[np.sort(rng.choice(f.size, n, replace=False))]
    if t.size > n:
        t = t[np.sort(rng.choice(t.size, n, replace=False))]
    X = np.concatenate([f, t]).reshape(-1, 1)
    y = np.concatenate([np.ones(n, dtype=int), np.zeros(n, dtype=int)])
    return X, y


def attack_folds(y: np.ndarray, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    folds = StratifiedKFold(n_splits=MIA_FOLDS, shuffle=True, random_state=seed)
    return list(folds.split(np.zeros((len(y), 1)), y))


def mia_from_losses(forget_losses, test_losses, seed: int = 0) -> MiaResult:
    """Cross-validated accuracy of a logistic attacker telling forget losses from test losses."""
    X, y = attack_dataset(forget_losses, test_losses, seed)
    accs = []
    for tr, ev in attack_folds(y, seed):
        clf = LogisticRegression().fit(X[tr], y[tr])
        accs.append(float(np.mean(clf.predict(X[ev]) == y[ev])))
    accs = np.array(accs)
    return MiaResult(float(accs.mean()), float(accs.std()), tuple(accs.tolist()),
                     int(np.size(forget_losses)), int(np.size(test_losses)))


def mia_score(model: ClassifierModel, forget: LabeledDataset, test: LabeledDataset, seed: int = 0) -> MiaResult:
    if len(forget) == 0 or len(test) == 0:
        raise ValueError("forget and test sets must be nonempty")
    return mia_from_losses(per_example_loss(model, forget), per_example_loss(model, test), seed)


def scale_up_factor(retrain_seconds: float, method_seconds: float) -> float:
    if retrain_seconds <= 0 or method_seconds <= 0:
        raise ValueError("runtimes must be positive")
    return retrain_seconds / method_seconds

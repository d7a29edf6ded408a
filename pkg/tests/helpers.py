import numpy as np

from unlearnbench.data import ForgetSpec, LabeledDataset, SyntheticConfig, build_matched_validation, make_blobs, split_retain_forget
from unlearnbench.model import TrainConfig, init_model, mlp, train
from unlearnbench.unlearn import UnlearningTask


def random_dataset(rng, n, dim, num_classes, split="train"):
    return LabeledDataset(rng.normal(size=(n, dim)), rng.integers(0, num_classes, n), num_classes, split)


def small_task(seed=0, hidden=(8,), mode="selective", count=10, epochs=20, dim=4, num_classes=3):
    """Trained original model plus retain/forget/validation/test on separable-ish blobs."""
    splits = make_blobs(SyntheticConfig(num_classes=num_classes, dim=dim, train_per_class=30, val_per_class=10,
                                        test_per_class=20, center_scale=1.5), seed)
    retain, forget = split_retain_forget(splits["train"], ForgetSpec(mode, 0, count if mode == "selective" else None), seed)
    arch = mlp(dim, list(hidden), num_classes)
    init = init_model(arch, seed)
    original = train(init, splits["train"], TrainConfig(epochs=epochs, learning_rate=0.05, batch_size=16, seed=seed))
    matched = build_matched_validation(splits["validation"], forget, retain)
    return UnlearningTask(original, retain, forget, matched, splits["test"]), init


def perturbed(model, scale=0.3, seed=1):
    from unlearnbench.model import ClassifierModel

    rng = np.random.default_rng(seed)
    return ClassifierModel(model.arch, model.weights + scale * rng.normal(size=model.weights.size))

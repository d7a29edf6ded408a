"""Block-structured classifiers, supervised training and evaluation.

Models are immutable: a :class:`ClassifierModel` is an architecture plus a flat
float64 weight vector, and every operation that changes weights returns a new
model. Torch modules are built on demand from the vector.
"""
from __future__ import annotations

import functools
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import LabeledDataset

DTYPE = torch.float64


class DivergenceError(RuntimeError):
    """A training loss became non-finite."""

    def __init__(self, epoch: int, loss: float, trail=None):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss
        self.trail = trail


@dataclass(frozen=True)
class Architecture:
    """``mlp``: one block per hidden layer plus the output layer.
    ``cnn``: one block per conv layer (conv, ReLU, 2x2 max-pool) plus a linear head.
    """

    kind: Literal["mlp", "cnn"]
    input_shape: tuple
    num_classes: int
    hidden: tuple = (64,)
    kernel_size: int = 3

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.kind not in ("mlp", "cnn"):
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if any(h < 1 for h in self.hidden) or any(s < 1 for s in self.input_shape):
            raise ValueError("layer widths and input dims must be positive")
        if self.kind == "cnn":
            if len(self.input_shape) != 3:
                raise ValueError("cnn input_shape must be (channels, height, width)")
            _, h, w = self.input_shape
            if min(h, w) >> len(self.hidden) < 1:
                raise ValueError(f"input {h}x{w} too small for {len(self.hidden)} pooling stages")

    @property
    def in_features(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def num_blocks(self) -> int:
        return len(self.hidden) + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(**{**d, "input_shape": tuple(d["input_shape"]), "hidden": tuple(d.get("hidden", ()))})


class BlockNet(nn.Module):
    def __init__(self, arch: Architecture):
        super().__init__()
        self.input_shape = arch.input_shape
        blocks = []
        if arch.kind == "mlp":
            width = arch.in_features
            for h in arch.hidden:
                blocks.append(nn.Sequential(nn.Linear(width, h), nn.ReLU()))
                width = h
            blocks.append(nn.Sequential(nn.Linear(width, arch.num_classes)))
        else:
            c, h, w = arch.input_shape
            pad = arch.kernel_size // 2
            for ch in arch.hidden:
                blocks.append(nn.Sequential(nn.Conv2d(c, ch, arch.kernel_size, padding=pad), nn.ReLU(), nn.MaxPool2d(2)))
                c, h, w = ch, h // 2, w // 2
            blocks.append(nn.Sequential(nn.Flatten(), nn.Linear(c * h * w, arch.num_classes)))
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x):
        x = x.reshape((x.shape[0],) + self.input_shape)
        for b in self.blocks:
            x = b(x)
        return x


@functools.lru_cache(maxsize=None)
def block_slices(arch: Architecture) -> tuple[slice, ...]:
    """Index range of each block inside the flat weight vector."""
    net = BlockNet(arch)
    out, start = [], 0
    for b in net.blocks:
        n = sum(p.numel() for p in b.parameters())
        out.append(slice(start, start + n))
        start += n
    return tuple(out)


def num_parameters(arch: Architecture) -> int:
    return block_slices(arch)[-1].stop


@dataclass(frozen=True, eq=False)
class ClassifierModel:
    arch: Architecture
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, copy=True).reshape(-1)
        if w.size != num_parameters(self.arch):
            raise ValueError(f"expected {num_parameters(self.arch)} weights, got {w.size}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def num_classes(self) -> int:
        return self.arch.num_classes

    def weights_hash(self) -> str:
        return hashlib.sha256(self.weights.tobytes()).hexdigest()

    def module(self) -> BlockNet:
        net = BlockNet(self.arch).to(DTYPE)
        nn.utils.vector_to_parameters(torch.from_numpy(self.weights.copy()), net.parameters())
        return net


def model_from_module(arch: Architecture, net: nn.Module) -> ClassifierModel:
    vec = nn.utils.parameters_to_vector(net.parameters()).detach().cpu().numpy()
    return ClassifierModel(arch, vec)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 0.1
    batch_size: int = 128
    weight_decay: float = 0.0005
    momentum: float = 0.9
    optimizer: Literal["sgd", "adaptive"] = "sgd"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError(f"invalid training config {self}")
        if self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise ValueError(f"invalid training config {self}")
        if self.optimizer not in ("sgd", "adaptive"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class ModelCheckpoint:
    weights: np.ndarray = field(repr=False)
    epoch: int
    forget_error: Optional[float] = None
    retain_error: Optional[float] = None
    wall_clock_seconds: float = 0.0

    def __post_init__(self):
        if self.epoch < 0 or self.wall_clock_seconds < 0:
            raise ValueError("epoch and wall clock must be nonnegative")
        for e in (self.forget_error, self.retain_error):
            if e is not None and not 0.0 <= e <= 1.0:
                raise ValueError(f"error {e} outside [0, 1]")


def init_model(arch: Architecture, seed: int) -> ClassifierModel:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = BlockNet(arch).to(DTYPE)
    return model_from_module(arch, net)


def make_optimizer(params, kind: str, lr: float, momentum: float, weight_decay: float):
    if kind == "sgd":
        return torch.optim.SGD(params, lr=lr, momentum=momentum, weight_decay=weight_decay)
    if kind == "adaptive":
        return torch.optim.Adam(params, lr=lr, weight_decay=weight_decay)
    raise ValueError(f"unknown optimizer {kind!r}")


def batches(n: int, batch_size: int, gen: torch.Generator) -> list[torch.Tensor]:
    """One shuffled pass over ``range(n)``; the last batch may be short."""
    perm = torch.randperm(n, generator=gen)
    return list(perm.split(batch_size))


def tensors(data: LabeledDataset):
    return torch.from_numpy(np.array(data.features)), torch.from_numpy(np.array(data.labels))


def trainable_module(model: ClassifierModel, frozen_blocks: int = 0) -> BlockNet:
    if not 0 <= frozen_blocks < model.arch.num_blocks:
        raise ValueError(f"can freeze 0..{model.arch.num_blocks - 1} blocks, got {frozen_blocks}")
    net = model.module()
    for b in net.blocks[:frozen_blocks]:
        for p in b.parameters():
            p.requires_grad_(False)
    return net


def optimizer_step(opt, loss: torch.Tensor, epoch: int) -> None:
    value = loss.item()
    if not math.isfinite(value):
        raise DivergenceError(epoch, value)
    opt.zero_grad()
    loss.backward()
    opt.step()


def train(model: ClassifierModel, data: LabeledDataset, config: TrainConfig, frozen_blocks: int = 0) -> ClassifierModel:
    """Mini-batch descent on mean cross-entropy; batches reshuffled each epoch from `config.seed`."""
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    if data.labels.max() >= model.num_classes:
        raise ValueError("labels exceed the model's class count")
    if config.epochs == 0:
        return model
    net = trainable_module(model, frozen_blocks)
    opt = make_optimizer(
        [p for p in net.parameters() if p.requires_grad],
        config.optimizer, config.learning_rate, config.momentum, config.weight_decay,
    )
    gen = torch.Generator().manual_seed(config.seed)
    X, y = tensors(data)
    for epoch in range(1, config.epochs + 1):
        for idx in batches(len(data), config.batch_size, gen):
            optimizer_step(opt, F.cross_entropy(net(X[idx]), y[idx]), epoch)
    return model_from_module(model.arch, net)


def _check_features(model: ClassifierModel, features) -> torch.Tensor:
    X = np.asarray(features, dtype=np.float64)
    X = X.reshape(len(X), -1) if X.ndim > 1 else X.reshape(1, -1)
    if X.shape[1] != model.arch.in_features:
        raise ValueError(f"expected {model.arch.in_features} features, got {X.shape[1]}")
    return torch.from_numpy(np.array(X))


@torch.no_grad()
def logits(model: ClassifierModel, features) -> np.ndarray:
    return model.module()(_check_features(model, features)).numpy()


def predict_proba(model: ClassifierModel, features) -> np.ndarray:
    z = torch.from_numpy(logits(model, features))
    return torch.softmax(z, dim=1).numpy()


def predict(model: ClassifierModel, features) -> np.ndarray:
    # np.argmax takes the first maximum, i.e. ties go to the lowest class index.
    return np.argmax(logits(model, features), axis=1)


def evaluate_error(model: ClassifierModel, data: LabeledDataset) -> float:
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return float(1.0 - np.mean(predict(model, data.features) == data.labels))


def per_example_loss(model: ClassifierModel, data: LabeledDataset) -> np.ndarray:
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    z = torch.from_numpy(logits(model, data.features))
    return F.cross_entropy(z, torch.from_numpy(np.array(data.labels)), reduction="none").numpy()


def cross_entropy_objective(model: ClassifierModel, data: LabeledDataset) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over `data` and its gradient w.r.t. the flat weights."""
    net = model.module()
    X, y = tensors(data)
    loss = F.cross_entropy(net(X), y)
    grads = torch.autograd.grad(loss, list(net.parameters()))
    return loss.item(), torch.cat([g.reshape(-1) for g in grads]).numpy()


# Checkpoint file: one JSON header line, then the weights as little-endian float64.
_MAGIC = b"UNLEARNBENCH-CKPT-1\n"


def save_checkpoint(path, model: ClassifierModel, seed: int = 0, epoch: int = 0, **meta) -> None:
    header = {"architecture": model.arch.to_dict(), "seed": seed, "epoch": epoch, "num_weights": int(model.weights.size), **meta}
    blob = _MAGIC + json.dumps(header, sort_keys=True).encode() + b"\n" + model.weights.astype("<f8").tobytes()
    Path(path).write_bytes(blob)


def load_checkpoint(path) -> tuple[ClassifierModel, dict]:
    raw = Path(path).read_bytes()
    if not raw.startswith(_MAGIC):
        raise ValueError(f"{path} is not a checkpoint file")
    head_end = raw.index(b"\n", len(_MAGIC))
    header = json.loads(raw[len(_MAGIC):head_end])
    weights = np.frombuffer(raw[head_end + 1:], dtype="<f8")
    if weights.size != header["num_weights"]:
        raise ValueError(f"{path} is truncated")
    return ClassifierModel(Architecture.from_dict(header["architecture"]), weights), header


def mlp(in_dim: int, hidden: Sequence[int], num_classes: int) -> Architecture:
    return Architecture("mlp", (in_dim,), num_classes, tuple(hidden))

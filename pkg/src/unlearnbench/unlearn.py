"""SCRUB teacher-student unlearning, checkpoint rewinding, and baseline methods.

The student starts as a copy of the original (teacher) model. Max epochs
ascend the teacher-to-student KL on the forget set; min epochs descend
``alpha * KL + gamma * CE`` on the retain set. A run of ``total_steps`` epochs
performs a max epoch before the min epoch in the first ``max_steps`` of them.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import torch
import torch.nn.functional as F

from .data import LabeledDataset
from .model import (
    ClassifierModel,
    DivergenceError,
    ModelCheckpoint,
    TrainConfig,
    batches,
    block_slices,
    evaluate_error,
    init_model,
    load_checkpoint,
    make_optimizer,
    model_from_module,
    optimizer_step,
    save_checkpoint,
    tensors,
    train,
    trainable_module,
)

KL_FLOOR = 1e-12
_LOG_FLOOR = math.log(KL_FLOOR)


@dataclass(frozen=True)
class ScrubConfig:
    alpha: float = 1.0
    gamma: float = 1.0
    max_steps: int = 5
    total_steps: int = 10
    forget_batch_size: int = 16
    retain_batch_size: int = 32
    learning_rate: float = 0.0005
    lr_decay_factor: float = 0.1
    lr_decay_epoch: Optional[int] = None  # first epoch run at the decayed rate; None = never
    optimizer: Literal["sgd", "adaptive"] = "adaptive"
    momentum: float = 0.9
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0 or self.gamma < 0:
            raise ValueError("alpha and gamma must be nonnegative")
        if self.total_steps < 1 or not 0 <= self.max_steps <= self.total_steps:
            raise ValueError("need 0 <= max_steps <= total_steps and total_steps >= 1")
        if self.forget_batch_size < 1 or self.retain_batch_size < 1:
            raise ValueError("batch sizes must be positive")
        if self.learning_rate <= 0 or not 0 < self.lr_decay_factor <= 1:
            raise ValueError("invalid learning rate schedule")

    @classmethod
    def from_step_table(cls, max_steps: int, min_steps: int, **kw) -> "ScrubConfig":
        """Map a (max steps, min steps) pair to the epoch loop: every epoch runs a min epoch."""
        return cls(max_steps=max_steps, total_steps=min_steps, **kw)

    def lr_at(self, epoch: int) -> float:
        if self.lr_decay_epoch is not None and epoch >= self.lr_decay_epoch:
            return self.learning_rate * self.lr_decay_factor
        return self.learning_rate


@dataclass(frozen=True)
class UnlearningTask:
    original: ClassifierModel
    retain: LabeledDataset
    forget: LabeledDataset
    matched_validation: LabeledDataset
    test: LabeledDataset

    def __post_init__(self):
        if self.retain.keys() & self.forget.keys():
            raise ValueError("retain and forget sets overlap")


@dataclass
class CheckpointTrail:
    checkpoints: list[ModelCheckpoint] = field(default_factory=list)

    def append(self, ckpt: ModelCheckpoint) -> None:
        last = self.checkpoints[-1].epoch if self.checkpoints else 0
        if ckpt.epoch <= last:
            raise ValueError(f"epoch {ckpt.epoch} does not follow {last}")
        self.checkpoints.append(ckpt)

    def __len__(self) -> int:
        return len(self.checkpoints)

    def __getitem__(self, i) -> ModelCheckpoint:
        return self.checkpoints[i]

    @property
    def forget_errors(self) -> list[float]:
        return [c.forget_error for c in self.checkpoints]

    def save(self, directory, arch) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        index = []
        for c in self.checkpoints:
            name = f"epoch-{c.epoch:03d}.ckpt"
            save_checkpoint(directory / name, ClassifierModel(arch, c.weights), epoch=c.epoch)
            index.append({"epoch": c.epoch, "file": name, "forget_error": c.forget_error,
                          "retain_error": c.retain_error, "wall_clock_seconds": c.wall_clock_seconds})
        (directory / "manifest.json").write_text(json.dumps({"checkpoints": index}, indent=2) + "\n")

    @classmethod
    def load(cls, directory) -> tuple["CheckpointTrail", object]:
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        trail, arch = cls(), None
        for entry in manifest["checkpoints"]:
            model, _ = load_checkpoint(directory / entry["file"])
            arch = model.arch
            trail.append(ModelCheckpoint(model.weights, entry["epoch"], entry["forget_error"],
                                         entry["retain_error"], entry["wall_clock_seconds"]))
        return trail, arch


def _is_distribution(p: np.ndarray) -> bool:
    return p.ndim == 1 and bool(np.all(p >= 0)) and abs(p.sum() - 1.0) <= 1e-6


def kl_distance(teacher_probs, student_probs) -> float:
    """KL(teacher || student) with 0 log 0 = 0 and student mass floored at 1e-12."""
    p = np.asarray(teacher_probs, dtype=np.float64)
    q = np.asarray(student_probs, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    if not (_is_distribution(p) and _is_distribution(q)):
        raise ValueError("inputs must be probability vectors")
    nz = p > 0
    return float(np.sum(p[nz] * (np.log(p[nz]) - np.log(np.maximum(q[nz], KL_FLOOR)))))


def batch_kl(student_logits: torch.Tensor, teacher_probs: torch.Tensor) -> torch.Tensor:
    """Per-example KL(teacher || student) from student logits."""
    log_q = torch.clamp(F.log_softmax(student_logits, dim=1), min=_LOG_FLOOR)
    return torch.sum(torch.xlogy(teacher_probs, teacher_probs) - teacher_probs * log_q, dim=1)


def min_step_loss(student_logits, teacher_probs, labels, alpha: float, gamma: float) -> torch.Tensor:
    # Zero-weight terms are skipped so degenerate settings match plain fine-tuning exactly.
    loss = student_logits.new_zeros(())
    if alpha:
        loss = loss + alpha * batch_kl(student_logits, teacher_probs).mean()
    if gamma:
        loss = loss + gamma * F.cross_entropy(student_logits, labels)
    return loss


def max_step_loss(student_logits, teacher_probs) -> torch.Tensor:
    """Negated mean KL: descending it ascends the distance to the teacher."""
    return -batch_kl(student_logits, teacher_probs).mean()


@torch.no_grad()
def teacher_probabilities(teacher: ClassifierModel, data: LabeledDataset) -> torch.Tensor:
    X, _ = tensors(data)
    return torch.softmax(teacher.module()(X), dim=1)


class _ScrubState:
    """Student module, shared optimizer and batch streams for one SCRUB run."""

    def __init__(self, student: ClassifierModel, teacher: ClassifierModel, config: ScrubConfig):
        self.arch = student.arch
        self.config = config
        self.teacher = teacher
        self.net = student.module()
        self.opt = make_optimizer(self.net.parameters(), config.optimizer, config.learning_rate,
                                  config.momentum, config.weight_decay)
        self.retain_gen = torch.Generator().manual_seed(config.seed)
        self.forget_gen = torch.Generator().manual_seed(config.seed + 7919)
        self._teacher_cache: dict[str, torch.Tensor] = {}

    def _teacher(self, data: LabeledDataset) -> torch.Tensor:
        key = data.fingerprint()
        if key not in self._teacher_cache:
            self._teacher_cache[key] = teacher_probabilities(self.teacher, data)
        return self._teacher_cache[key]

    def set_lr(self, lr: float) -> None:
        for g in self.opt.param_groups:
            g["lr"] = lr

    def max_epoch(self, forget: LabeledDataset, epoch: int = 1) -> None:
        if len(forget) == 0:
            return
        X, _ = tensors(forget)
        pt = self._teacher(forget)
        for idx in batches(len(forget), self.config.forget_batch_size, self.forget_gen):
            optimizer_step(self.opt, max_step_loss(self.net(X[idx]), pt[idx]), epoch)

    def min_epoch(self, retain: LabeledDataset, epoch: int = 1) -> None:
        if len(retain) == 0:
            raise ValueError("retain set is empty")
        X, y = tensors(retain)
        pt = self._teacher(retain) if self.config.alpha else None
        for idx in batches(len(retain), self.config.retain_batch_size, self.retain_gen):
            loss = min_step_loss(self.net(X[idx]), None if pt is None else pt[idx], y[idx],
                                 self.config.alpha, self.config.gamma)
            optimizer_step(self.opt, loss, epoch)

    def model(self) -> ClassifierModel:
        return model_from_module(self.arch, self.net)


def do_max_epoch(student: ClassifierModel, teacher: ClassifierModel, forget: LabeledDataset, config: ScrubConfig) -> ClassifierModel:
    """One ascent pass over `forget` with a fresh optimizer."""
    if len(forget) == 0:
        return student
    state = _ScrubState(student, teacher, config)
    state.max_epoch(forget)
    return state.model()


def do_min_epoch(student: ClassifierModel, teacher: ClassifierModel, retain: LabeledDataset, config: ScrubConfig) -> ClassifierModel:
    """One descent pass over `retain` with a fresh optimizer."""
    state = _ScrubState(student, teacher, config)
    state.min_epoch(retain)
    return state.model()


def scrub(task: UnlearningTask, config: ScrubConfig) -> tuple[ClassifierModel, CheckpointTrail]:
    state = _ScrubState(task.original, task.original, config)
    trail = CheckpointTrail()
    start = time.perf_counter()
    for epoch in range(1, config.total_steps + 1):
        state.set_lr(config.lr_at(epoch))
        try:
            if epoch <= config.max_steps:
                state.max_epoch(task.forget, epoch)
            state.min_epoch(task.retain, epoch)
        except DivergenceError as exc:
            exc.trail = trail
            raise
        current = state.model()
        trail.append(ModelCheckpoint(
            current.weights,
            epoch,
            forget_error=evaluate_error(current, task.forget) if len(task.forget) else None,
            retain_error=evaluate_error(current, task.retain),
            wall_clock_seconds=time.perf_counter() - start,
        ))
    return state.model(), trail


def rewind_choice(forget_errors: list[float], reference: float, final_forget_error: float) -> Optional[int]:
    """Index of the checkpoint to rewind to, or None to keep the final model.

    Picks the forget error closest to `reference`; ties go to the latest epoch.
    """
    if not forget_errors:
        raise ValueError("empty checkpoint trail")
    if final_forget_error <= reference:
        return None
    best, best_gap = None, math.inf
    for i, err in enumerate(forget_errors):
        gap = abs(err - reference)
        if gap <= best_gap:
            best, best_gap = i, gap
    return best


def rewind_reference(final: ClassifierModel, task: UnlearningTask) -> float:
    if len(task.matched_validation) == 0:
        raise ValueError("matched validation set is empty")
    return evaluate_error(final, task.matched_validation)


def rewind(trail: CheckpointTrail, final: ClassifierModel, task: UnlearningTask) -> ClassifierModel:
    if len(trail) == 0:
        raise ValueError("empty checkpoint trail")
    choice = rewind_choice(trail.forget_errors, rewind_reference(final, task), evaluate_error(final, task.forget))
    if choice is None:
        return final
    return ClassifierModel(final.arch, trail[choice].weights)


def scrub_rewind(task: UnlearningTask, config: ScrubConfig) -> tuple[ClassifierModel, CheckpointTrail, Optional[int]]:
    """SCRUB followed by rewinding; also returns the chosen epoch (None when not rewound)."""
    final, trail = scrub(task, config)
    reference = rewind_reference(final, task)
    choice = rewind_choice(trail.forget_errors, reference, evaluate_error(final, task.forget))
    if choice is None:
        return final, trail, None
    return ClassifierModel(final.arch, trail[choice].weights), trail, trail[choice].epoch


def original(task: UnlearningTask) -> ClassifierModel:
    return task.original


def retrain(task: UnlearningTask, config: TrainConfig, init_seed: int) -> ClassifierModel:
    return train(init_model(task.original.arch, init_seed), task.retain, config)


def finetune(task: UnlearningTask, config: TrainConfig) -> ClassifierModel:
    return train(task.original, task.retain, config)


def neggrad_loss(retain_logits, retain_labels, forget_logits, forget_labels, beta: float) -> torch.Tensor:
    loss = retain_logits.new_zeros(())
    if beta:
        loss = loss + beta * F.cross_entropy(retain_logits, retain_labels)
    if beta != 1.0 and forget_logits is not None:
        loss = loss - (1.0 - beta) * F.cross_entropy(forget_logits, forget_labels)
    return loss


def neggrad(task: UnlearningTask, beta: float, config: TrainConfig) -> ClassifierModel:
    """Descend ``beta * CE(retain) - (1 - beta) * CE(forget)``.

    Each retain batch is paired with the next batch of a forget stream that
    reshuffles whenever it runs out.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    if config.epochs == 0:
        return task.original
    net = trainable_module(task.original)
    opt = make_optimizer(net.parameters(), config.optimizer, config.learning_rate, config.momentum, config.weight_decay)
    retain_gen = torch.Generator().manual_seed(config.seed)
    forget_gen = torch.Generator().manual_seed(config.seed + 7919)
    Xr, yr = tensors(task.retain)
    Xf, yf = tensors(task.forget)
    use_forget = beta != 1.0 and len(task.forget) > 0
    pending: list[torch.Tensor] = []
    for epoch in range(1, config.epochs + 1):
        for idx in batches(len(task.retain), config.batch_size, retain_gen):
            fl, fy = None, None
            if use_forget:
                if not pending:
                    pending = batches(len(task.forget), config.batch_size, forget_gen)
                fidx = pending.pop(0)
                fl, fy = net(Xf[fidx]), yf[fidx]
            rl = net(Xr[idx])
            optimizer_step(opt, neggrad_loss(rl, yr[idx], fl, fy, beta), epoch)
    return model_from_module(task.original.arch, net)


def _check_k(model: ClassifierModel, k: int) -> None:
    if not 0 <= k < model.arch.num_blocks:
        raise ValueError(f"k must lie in [0, {model.arch.num_blocks}), got {k}")


def cf_k(task: UnlearningTask, k_frozen_blocks: int, config: TrainConfig) -> ClassifierModel:
    """Freeze the first k blocks of the original model and fine-tune the rest on retain."""
    _check_k(task.original, k_frozen_blocks)
    return train(task.original, task.retain, config, frozen_blocks=k_frozen_blocks)


def eu_k(task: UnlearningTask, k_frozen_blocks: int, init_weights, config: TrainConfig) -> ClassifierModel:
    """Keep the first k original blocks, re-initialize the rest from `init_weights`, train on retain."""
    _check_k(task.original, k_frozen_blocks)
    init = np.asarray(init_weights, dtype=np.float64).reshape(-1)
    if init.shape != task.original.weights.shape:
        raise ValueError(f"init_weights has {init.size} entries, expected {task.original.weights.size}")
    w = init.copy()
    for s in block_slices(task.original.arch)[:k_frozen_blocks]:
        w[s] = task.original.weights[s]
    start = ClassifierModel(task.original.arch, w)
    return train(start, task.retain, config, frozen_blocks=k_frozen_blocks)


def _value_and_grad(net, loss) -> tuple[float, np.ndarray]:
    grads = torch.autograd.grad(loss, list(net.parameters()))
    return loss.item(), torch.cat([g.reshape(-1) for g in grads]).numpy()


def scrub_objective(student: ClassifierModel, teacher: ClassifierModel, retain: LabeledDataset,
                    forget: LabeledDataset, alpha: float, gamma: float) -> tuple[float, np.ndarray]:
    """Full-batch SCRUB objective and its weight gradient:
    ``alpha * mean KL(retain) + gamma * mean CE(retain) - mean KL(forget)``.
    """
    net = student.module()
    Xr, yr = tensors(retain)
    Xf, _ = tensors(forget)
    loss = min_step_loss(net(Xr), teacher_probabilities(teacher, retain), yr, alpha, gamma)
    if len(forget):
        loss = loss + max_step_loss(net(Xf), teacher_probabilities(teacher, forget))
    return _value_and_grad(net, loss)


def neggrad_objective(model: ClassifierModel, retain: LabeledDataset, forget: LabeledDataset, beta: float) -> tuple[float, np.ndarray]:
    """Full-batch ``beta * CE(retain) - (1 - beta) * CE(forget)`` and its weight gradient."""
    net = model.module()
    Xr, yr = tensors(retain)
    Xf, yf = tensors(forget)
    return _value_and_grad(net, neggrad_loss(net(Xr), yr, net(Xf), yf, beta))


def stop_epoch(trail: CheckpointTrail, original_forget_error: float, original_retain_error: float, tol: float = 0.0) -> Optional[int]:
    """First epoch whose forget error rose above the original's while retain error did not."""
    for c in trail.checkpoints:
        if c.forget_error is not None and c.forget_error > original_forget_error and c.retain_error <= original_retain_error + tol:
            return c.epoch
    return None


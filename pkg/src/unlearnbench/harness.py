"""Method x seed experiment grid with metric collection and persistence."""
from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import __version__
from .config import ExperimentConfig, MethodSpec
from .data import (
    LabeledDataset,
    build_matched_validation,
    inject_confusion,
    load_dataset,
    split_retain_forget,
)
from .metrics import confusion_matrix, fgt_err, ic_err, mia_score, scale_up_factor
from .model import Architecture, ClassifierModel, DivergenceError, evaluate_error, init_model, train
from .report import ExperimentReport, ReportRow, emit_report
from .unlearn import (
    CheckpointTrail,
    UnlearningTask,
    cf_k,
    eu_k,
    finetune,
    neggrad,
    retrain,
    rewind_choice,
    rewind_reference,
    scrub,
    stop_epoch,
)

log = logging.getLogger(__name__)

OUTPUT_ENV = "UNLEARNBENCH_OUT"


@dataclass
class SeedContext:
    seed: int
    task: UnlearningTask
    init_weights: np.ndarray
    mia_test: Optional[LabeledDataset]
    original_seconds: float


@dataclass
class CellResult:
    row: ReportRow
    trail: Optional[CheckpointTrail] = None
    arch: Optional[Architecture] = None


def build_architecture(cfg: ExperimentConfig, data: LabeledDataset) -> Architecture:
    spec = dict(cfg.architecture)
    kind = spec.pop("kind", "mlp")
    shape = tuple(spec.pop("input_shape", data.feature_shape))
    return Architecture(kind, shape, data.num_classes, **spec)


def prepare_seed(cfg: ExperimentConfig, seed: int) -> SeedContext:
    splits = load_dataset(cfg.dataset.source, seed, path=cfg.dataset.path, synthetic=cfg.dataset.synthetic)
    train_set, validation, test = splits["train"], splits["validation"], splits["test"]
    if cfg.confusion is not None:
        train_set, forget, retain = inject_confusion(train_set, cfg.confusion, seed)
    else:
        retain, forget = split_retain_forget(train_set, cfg.forget, seed)
    arch = build_architecture(cfg, train_set)
    init = init_model(arch, seed)
    start = time.perf_counter()
    original = train(init, train_set, replace(cfg.training, seed=seed))
    elapsed = time.perf_counter() - start
    matched = build_matched_validation(validation, forget, retain, seed=seed)
    mia_test = None
    if "M3" in cfg.suite:
        mia_test = test.subset(np.flatnonzero(np.isin(test.labels, np.unique(forget.true_labels))))
    task = UnlearningTask(original, retain, forget, matched, test)
    return SeedContext(seed, task, init.weights, mia_test, elapsed)


def run_method(cfg: ExperimentConfig, m: MethodSpec, ctx: SeedContext):
    """Returns (model, trail or None, rewind epoch or None)."""
    task, seed = ctx.task, ctx.seed
    if m.kind == "original":
        return task.original, None, None
    if m.kind == "retrain":
        return retrain(task, cfg.method_train(m, seed), seed), None, None
    if m.kind == "finetune":
        return finetune(task, cfg.method_train(m, seed)), None, None
    if m.kind == "neggrad":
        return neggrad(task, m.beta, cfg.method_train(m, seed)), None, None
    if m.kind == "cf_k":
        return cf_k(task, m.k, cfg.method_train(m, seed)), None, None
    if m.kind == "eu_k":
        return eu_k(task, m.k, ctx.init_weights, cfg.method_train(m, seed)), None, None
    if m.kind == "scrub":
        final, trail = scrub(task, replace(m.scrub, seed=seed))
        if not m.rewind:
            return final, trail, None
        choice = rewind_choice(trail.forget_errors, rewind_reference(final, task), evaluate_error(final, task.forget))
        if choice is None:
            return final, trail, None
        return ClassifierModel(final.arch, trail[choice].weights), trail, trail[choice].epoch
    raise ValueError(f"unknown method kind {m.kind!r}")


def collect_metrics(cfg: ExperimentConfig, row: ReportRow, model: ClassifierModel, ctx: SeedContext) -> None:
    task = ctx.task
    row.retain_error = evaluate_error(model, task.retain)
    row.forget_error = evaluate_error(model, task.forget) if len(task.forget) else None
    row.test_error = evaluate_error(model, task.test)
    if "M2" in cfg.suite:
        a, b = cfg.confusion.class_a, cfg.confusion.class_b
        for name, data in (("test", task.test), ("retain", task.retain)):
            cm = confusion_matrix(model, data)
            setattr(row, f"ic_{name}", ic_err(cm, a, b))
            count = fgt_err(cm, a, b)
            setattr(row, f"fgt_{name}", count)
            setattr(row, f"fgt_{name}_rate", count / int(cm.class_totals()[[a, b]].sum()))
    if "M3" in cfg.suite:
        res = mia_score(model, task.forget, ctx.mia_test, ctx.seed)
        row.mia_mean, row.mia_std = res.attack_accuracy_mean, res.attack_accuracy_std


def run_cell(cfg: ExperimentConfig, m: MethodSpec, ctx: SeedContext) -> CellResult:
    torch.set_num_threads(1)
    row = ReportRow(m.name, ctx.seed)
    start = time.perf_counter()
    try:
        model, trail, rewound = run_method(cfg, m, ctx)
        elapsed = time.perf_counter() - start
        row.wall_clock_seconds = ctx.original_seconds if m.kind == "original" else elapsed
        row.rewind_epoch = rewound
        if trail is not None:
            orig_f = evaluate_error(ctx.task.original, ctx.task.forget) if len(ctx.task.forget) else 0.0
            row.stop_epoch = stop_epoch(trail, orig_f, evaluate_error(ctx.task.original, ctx.task.retain))
        collect_metrics(cfg, row, model, ctx)
    except DivergenceError as exc:
        row.status, row.error_code, row.error_message = "error", "divergence", str(exc)
        trail = None
    except Exception as exc:  # crash isolation: one failed cell must not stop the grid
        log.exception("cell %s/%s failed", m.name, ctx.seed)
        row.status, row.error_code, row.error_message = "error", type(exc).__name__, str(exc)
        trail = None
    if row.wall_clock_seconds is None:
        row.wall_clock_seconds = time.perf_counter() - start
    return CellResult(row, trail if m.rewind else None, ctx.task.original.arch)


def _run_seed_cells(cfg: ExperimentConfig, seed: int) -> list[CellResult]:
    torch.set_num_threads(1)
    try:
        ctx = prepare_seed(cfg, seed)
    except Exception as exc:
        log.exception("seed %s setup failed", seed)
        code = "divergence" if isinstance(exc, DivergenceError) else f"setup:{type(exc).__name__}"
        return [CellResult(ReportRow(m.name, seed, "error", code, str(exc))) for m in cfg.methods]
    return [run_cell(cfg, m, ctx) for m in cfg.methods]


def run_dir_for(cfg: ExperimentConfig, out: Optional[str] = None) -> Path:
    root = Path(out or os.environ.get(OUTPUT_ENV) or cfg.output_dir)
    return root / f"run-{cfg.config_hash()[:12]}"


def metadata(cfg: ExperimentConfig) -> dict:
    notes = ["checkpoint forget errors use the forget set's own (possibly corrupted) labels"]
    if cfg.confusion is not None:
        notes.append("matched validation set is selected by clean class membership")
    if any(m.kind == "scrub" for m in cfg.methods):
        notes.append("scrub schedule: max_steps epochs run a max pass before the min pass; total_steps epochs in all")
    return {
        "config_hash": cfg.config_hash(),
        "tool": "unlearnbench",
        "tool_version": __version__,
        "config": cfg.to_dict(),
        "notes": notes,
    }


def run_experiment(cfg: ExperimentConfig, jobs: int = 1, out_dir=None, persist: bool = True) -> ExperimentReport:
    torch.set_num_threads(1)
    results: list[CellResult] = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_seed_cells, cfg, s) for s in cfg.seeds]
            for f in futures:
                results.extend(f.result())
    else:
        for s in cfg.seeds:
            results.extend(_run_seed_cells(cfg, s))

    order = {m.name: i for i, m in enumerate(cfg.methods)}
    results.sort(key=lambda r: (order[r.row.method], r.row.seed))
    retrain_names = [m.name for m in cfg.methods if m.kind == "retrain"]
    for res in results:
        r = res.row
        if r.status != "ok" or not retrain_names or r.method == "original":
            continue
        ref = next((x.row for x in results if x.row.method == retrain_names[0] and x.row.seed == r.seed), None)
        if ref is not None and ref.status == "ok":
            r.scale_up = scale_up_factor(ref.wall_clock_seconds, r.wall_clock_seconds)
    for res in results:
        if cfg.methods[order[res.row.method]].kind == "original":
            res.row.scale_up = None

    report = ExperimentReport([r.row for r in results], metadata(cfg))
    if persist:
        run_dir = run_dir_for(cfg, out_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.snapshot").write_text(cfg.snapshot())
        emit_report(report, "csv", run_dir)
        emit_report(report, "json", run_dir)
        for res in results:
            if res.trail is not None:
                res.trail.save(run_dir / "checkpoints" / res.row.method / str(res.row.seed), res.arch)
        report.metadata = dict(report.metadata, run_dir=str(run_dir))
    return report


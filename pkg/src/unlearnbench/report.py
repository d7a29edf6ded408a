"""Experiment reports: row schema, aggregation and emission to table/csv/json/plots.

File layout of a run directory::

    rows.csv          one row per (method, seed); metric columns only (ROW_COLUMNS)
    aggregates.csv    per-method mean/std of every numeric metric column
    timing.csv        wall-clock seconds and scale-up per (method, seed)
    report.json       metadata + rows + aggregates (no timings)
    report.txt        fixed-width table (TABLE_COLUMNS)
    plots/<metric>.png

Timings live in their own file because they are the only non-reproducible
quantity; rows.csv, aggregates.csv and report.json are bitwise stable for a
fixed config.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

METRIC_COLUMNS = (
    "retain_error", "forget_error", "test_error",
    "ic_test", "ic_retain", "fgt_test", "fgt_retain", "fgt_test_rate", "fgt_retain_rate",
    "mia_mean", "mia_std",
)
ROW_COLUMNS = ("method", "seed", "status", "error_code", *METRIC_COLUMNS, "rewind_epoch", "stop_epoch")
TIMING_COLUMNS = ("method", "seed", "wall_clock_seconds", "scale_up")
TABLE_COLUMNS = ("method", "seed", *METRIC_COLUMNS, "wall_clock_seconds", "scale_up", "status")
_INT_COLUMNS = {"seed", "fgt_test", "fgt_retain", "rewind_epoch", "stop_epoch"}


@dataclass
class ReportRow:
    method: str
    seed: int
    status: str = "ok"
    error_code: Optional[str] = None
    error_message: Optional[str] = None
    retain_error: Optional[float] = None
    forget_error: Optional[float] = None
    test_error: Optional[float] = None
    ic_test: Optional[float] = None
    ic_retain: Optional[float] = None
    fgt_test: Optional[int] = None
    fgt_retain: Optional[int] = None
    fgt_test_rate: Optional[float] = None
    fgt_retain_rate: Optional[float] = None
    mia_mean: Optional[float] = None
    mia_std: Optional[float] = None
    rewind_epoch: Optional[int] = None
    stop_epoch: Optional[int] = None
    wall_clock_seconds: Optional[float] = None
    scale_up: Optional[float] = None


@dataclass
class AggregateRow:
    method: str
    n: int
    mean: dict
    std: dict


@dataclass
class ExperimentReport:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def methods(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.method not in seen:
                seen.append(r.method)
        return seen

    def by_method(self, method: str) -> list[ReportRow]:
        return [r for r in self.rows if r.method == method]

    def aggregates(self, columns=METRIC_COLUMNS + ("wall_clock_seconds", "scale_up")) -> list[AggregateRow]:
        """Mean and population std over successful rows, per method."""
        out = []
        for m in self.methods():
            ok = [r for r in self.by_method(m) if r.status == "ok"]
            mean, std = {}, {}
            for c in columns:
                vals = [getattr(r, c) for r in ok if getattr(r, c) is not None]
                if vals:
                    mean[c] = float(np.mean(vals))
                    std[c] = float(np.std(vals))
            out.append(AggregateRow(m, len(ok), mean, std))
        return out

    def aggregate(self, method: str) -> AggregateRow:
        return next(a for a in self.aggregates() if a.method == method)

    @property
    def ok(self) -> bool:
        return all(r.status == "ok" for r in self.rows)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(col: str, s: str):
    if s == "":
        return None
    if col in _INT_COLUMNS:
        return int(s)
    if col in ("method", "status", "error_code"):
        return s
    return float(s)


def _csv(header, records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for rec in records:
        w.writerow([_fmt(v) for v in rec])
    return buf.getvalue()


def rows_csv(report: ExperimentReport) -> str:
    return _csv(ROW_COLUMNS, ([getattr(r, c) for c in ROW_COLUMNS] for r in report.rows))


def timing_csv(report: ExperimentReport) -> str:
    return _csv(TIMING_COLUMNS, ([getattr(r, c) for c in TIMING_COLUMNS] for r in report.rows))


def aggregates_csv(report: ExperimentReport) -> str:
    header = ["method", "n"] + [f"{c}_{s}" for c in METRIC_COLUMNS for s in ("mean", "std")]
    recs = []
    for a in report.aggregates(METRIC_COLUMNS):
        recs.append([a.method, a.n] + [d.get(c) for c in METRIC_COLUMNS for d in (a.mean, a.std)])
    return _csv(header, recs)


def report_json(report: ExperimentReport) -> str:
    payload = {
        "metadata": report.metadata,
        "rows": [{c: getattr(r, c) for c in ROW_COLUMNS + ("error_message",)} for r in report.rows],
        "aggregates": [asdict(a) for a in report.aggregates(METRIC_COLUMNS)],
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def table_text(report: ExperimentReport) -> str:
    def cell(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.4f}"
        return str(v)

    lines = [list(TABLE_COLUMNS)]
    for r in report.rows:
        lines.append([cell(getattr(r, c)) for c in TABLE_COLUMNS])
    for a in report.aggregates():
        row = [f"{a.method} (mean±std)", f"n={a.n}"]
        for c in TABLE_COLUMNS[2:-1]:
            row.append(f"{a.mean[c]:.4f}±{a.std[c]:.4f}" if c in a.mean else "-")
        row.append("")
        lines.append(row)
    widths = [max(len(l[i]) for l in lines) for i in range(len(TABLE_COLUMNS))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(l, widths)).rstrip() for l in lines) + "\n"


def read_report(run_dir) -> ExperimentReport:
    run_dir = Path(run_dir)
    rows = []
    with open(run_dir / "rows.csv", newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(ReportRow(**{c: _parse(c, rec[c]) for c in ROW_COLUMNS}))
    timing = run_dir / "timing.csv"
    if timing.exists():
        with open(timing, newline="") as fh:
            times = {(t["method"], int(t["seed"])): t for t in csv.DictReader(fh)}
        for r in rows:
            t = times.get((r.method, r.seed))
            if t:
                r.wall_clock_seconds = _parse("wall_clock_seconds", t["wall_clock_seconds"])
                r.scale_up = _parse("scale_up", t["scale_up"])
    meta = {}
    if (run_dir / "report.json").exists():
        payload = json.loads((run_dir / "report.json").read_text())
        meta = payload["metadata"]
        messages = {(p["method"], p["seed"]): p.get("error_message") for p in payload["rows"]}
        for r in rows:
            r.error_message = messages.get((r.method, r.seed))
    return ExperimentReport(rows, meta)


def _ci95(vals) -> float:
    from scipy import stats

    vals = np.asarray(vals, dtype=float)
    if vals.size < 2:
        return 0.0
    return float(stats.t.ppf(0.975, vals.size - 1) * vals.std(ddof=1) / math.sqrt(vals.size))


def write_plots(report: ExperimentReport, out_dir) -> list[Path]:
    """One bar chart per metric: method means with 95% t-intervals over seeds."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for c in METRIC_COLUMNS + ("scale_up",):
        names, means, errs = [], [], []
        for m in report.methods():
            vals = [getattr(r, c) for r in report.by_method(m) if r.status == "ok" and getattr(r, c) is not None]
            if vals:
                names.append(m)
                means.append(float(np.mean(vals)))
                errs.append(_ci95(vals))
        if not names:
            continue
        fig, ax = plt.subplots(figsize=(1.2 * len(names) + 2, 3.5))
        ax.bar(names, means, yerr=errs, capsize=4, color="0.6", edgecolor="0.2")
        ax.set_ylabel(c)
        ax.set_title(f"{c} (95% CI over seeds)")
        ax.tick_params(axis="x", rotation=30)
        fig.tight_layout()
        path = out_dir / f"{c}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        written.append(path)
    return written


def emit_report(report: ExperimentReport, fmt: str, out_dir) -> list[Path]:
    if not report.rows:
        raise ValueError("report has no rows")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write to {out_dir}: {exc}") from exc
    if fmt == "table":
        p = out_dir / "report.txt"
        p.write_text(table_text(report))
        return [p]
    if fmt == "csv":
        files = {"rows.csv": rows_csv(report), "aggregates.csv": aggregates_csv(report), "timing.csv": timing_csv(report)}
        for name, text in files.items():
            (out_dir / name).write_text(text)
        return [out_dir / n for n in files]
    if fmt == "json":
        p = out_dir / "report.json"
        p.write_text(report_json(report))
        return [p]
    if fmt == "plots":
        return write_plots(report, out_dir / "plots")
    raise ValueError(f"unknown report format {fmt!r}")

"""Run a desk-scale config and print the headline comparisons.

    python scripts/run_desk.py configs/m1_desk.yaml --out runs
    python scripts/run_desk.py configs/m2_desk.yaml --jobs 3
"""
import argparse

from unlearnbench.config import load_config, with_overrides
from unlearnbench.harness import run_experiment
from unlearnbench.report import emit_report, table_text

HEADLINES = {
    "M1": ("retain_error", "forget_error", "test_error"),
    "M2": ("ic_test", "fgt_test", "ic_retain", "fgt_retain"),
    "M3": ("mia_mean",),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("config")
    ap.add_argument("--out")
    ap.add_argument("--seeds", type=int, nargs="+")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--plots", action="store_true")
    args = ap.parse_args()

    cfg = with_overrides(load_config(args.config), seeds=args.seeds)
    report = run_experiment(cfg, jobs=args.jobs, out_dir=args.out)
    print(table_text(report))
    cols = [c for s in cfg.suite for c in HEADLINES[s]] + ["scale_up"]
    print("method".ljust(12) + "".join(c.rjust(14) for c in cols))
    for agg in report.aggregates():
        cells = [f"{agg.mean[c]:.3f}" if c in agg.mean else "-" for c in cols]
        print(agg.method.ljust(12) + "".join(v.rjust(14) for v in cells))
    if args.plots:
        emit_report(report, "plots", report.metadata["run_dir"])
    print(report.metadata["run_dir"])


if __name__ == "__main__":
    main()

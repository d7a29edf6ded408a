"""Show the per-epoch forget error of SCRUB runs and the epoch rewinding picks.

    python scripts/rewind_trace.py configs/m1_desk.yaml --method scrub_r
"""
import argparse
from dataclasses import replace

from unlearnbench.config import load_config
from unlearnbench.harness import prepare_seed
from unlearnbench.model import evaluate_error
from unlearnbench.unlearn import rewind_choice, rewind_reference, scrub


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("config")
    ap.add_argument("--method", default="scrub_r")
    ap.add_argument("--seeds", type=int, nargs="+")
    args = ap.parse_args()

    cfg = load_config(args.config)
    spec = next(m for m in cfg.methods if m.name == args.method)
    for seed in args.seeds or cfg.seeds:
        ctx = prepare_seed(cfg, seed)
        final, trail = scrub(ctx.task, replace(spec.scrub, seed=seed))
        ref = rewind_reference(final, ctx.task)
        choice = rewind_choice(trail.forget_errors, ref, evaluate_error(final, ctx.task.forget))
        errs = " ".join(f"{e:.3f}" for e in trail.forget_errors)
        picked = "final" if choice is None else f"epoch {trail[choice].epoch}"
        print(f"seed {seed}: reference {ref:.3f} | forget errors {errs} | keep {picked}")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Desk-scale add experiment: entropy vs similarity with annotation cost.

Appends the selected annotated utterances to the full baseline training
set and reports, per strategy, how many oracle gradings were spent and
what fraction was wasted on out-of-domain utterances.
"""

import argparse
import os
import time

from alpool.harness import default_experiment_config, emit_report, run_experiment_add
from alpool.selection import SelectionBudget


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="results/add_report.json")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--runs", type=int, default=11)
    parser.add_argument("--add", type=int, default=100)
    parser.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    parser.add_argument("--quick", action="store_true",
                        help="2 runs only, for a fast smoke pass")
    args = parser.parse_args()

    config = default_experiment_config(
        base_seed=args.seed,
        n_runs=2 if args.quick else args.runs,
        swap_count=None,
        add_count=args.add,
        strategies=("similarity", "entropy"),
        budget=SelectionBudget(k=5, total_budget=4000),
        n_jobs=args.jobs,
    )
    start = time.time()
    result = run_experiment_add(config)
    report = result.report

    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    emit_report(report, args.out, fmt="json")

    print(f"finished in {time.time() - start:.0f}s -> {args.out}")
    for name, cond in sorted(report.conditions.items()):
        print(f"  {name:>12}: mean error {cond.mean_error_rate:.4f}")
    for name, acc in sorted(report.accounting.items()):
        print(f"  {name:>12}: graded {acc.graded_count} for "
              f"{acc.added_count} usable labels "
              f"(out-of-domain rate {acc.ood_rate:.1%})")


if __name__ == "__main__":
    main()

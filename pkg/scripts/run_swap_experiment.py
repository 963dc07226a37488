#!/usr/bin/env python3
"""Desk-scale swap experiment: baseline vs similarity vs random.

Trains the baseline ensemble, expands its dev-set errors into the pool,
swaps the annotated selections into a constant-size training set, and
reports mean blind-test error with significance tests over repeated runs.
"""

import argparse
import os
import time

from alpool.harness import default_experiment_config, emit_report, run_experiment_swap


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="results/swap_report.json")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--runs", type=int, default=11)
    parser.add_argument("--swap", type=int, default=200)
    parser.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    parser.add_argument("--quick", action="store_true",
                        help="2 runs only, for a fast smoke pass")
    args = parser.parse_args()

    config = default_experiment_config(
        base_seed=args.seed,
        n_runs=2 if args.quick else args.runs,
        swap_count=args.swap,
        n_jobs=args.jobs,
    )
    start = time.time()
    result = run_experiment_swap(config)
    report = result.report

    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    emit_report(report, args.out, fmt="json")
    emit_report(report, os.path.splitext(args.out)[0] + ".csv", fmt="csv")

    print(f"finished in {time.time() - start:.0f}s -> {args.out}")
    for name, cond in sorted(report.conditions.items()):
        print(f"  {name:>12}: mean error {cond.mean_error_rate:.4f} "
              f"(std {cond.std_error_rate:.4f})")
    for comp in report.comparisons:
        if comp.reference == "baseline" or (comp.reference, comp.treatment) == (
                "random", "similarity"):
            print(f"  {comp.treatment} vs {comp.reference}: "
                  f"RER {comp.relative_error_reduction:+.2%} "
                  f"p={comp.p_value:.3g} (perm {comp.p_value_permutation:.3g})")


if __name__ == "__main__":
    main()

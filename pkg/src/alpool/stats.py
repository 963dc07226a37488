"""Significance tests for matched repeated-run error rates.

The primary test is a one-sided Welch two-sample t-test (H1: the second
sample's mean is lower); an exact or sampled permutation test is emitted
alongside as a robustness cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy import stats as scipy_stats

from . import seeding

_MAX_EXACT_PERMUTATIONS = 100_000


@dataclass(frozen=True)
class ComparisonStats:
    mean_a: float
    mean_b: float
    relative_error_reduction: float
    t_statistic: float
    degrees_of_freedom: float
    p_value: float
    p_value_permutation: float
    permutation_exact: bool


def relative_error_reduction(mean_a: float, mean_b: float) -> float:
    """(mean_a - mean_b) / mean_a, with 0/0 defined as 0."""
    if mean_a == 0.0:
        return 0.0
    return (mean_a - mean_b) / mean_a


def welch_one_sided(a: Sequence[float], b: Sequence[float]
                    ) -> tuple[float, float, float]:
    """(t, df, p) for H1: mean(b) < mean(a).

    Zero pooled variance degenerates to p = 1.0 for equal means and to the
    0/1 limit otherwise (the epsilon-variance guard).
    """
    xa = np.asarray(a, dtype=np.float64)
    xb = np.asarray(b, dtype=np.float64)
    if xa.size < 2 or xb.size < 2:
        raise ValueError("both samples need at least 2 observations")
    mean_a, mean_b = xa.mean(), xb.mean()
    var_a = xa.var(ddof=1)
    var_b = xb.var(ddof=1)
    se2 = var_a / xa.size + var_b / xb.size
    if se2 == 0.0:
        if mean_a == mean_b:
            return 0.0, float(xa.size + xb.size - 2), 1.0
        t = math.inf if mean_a > mean_b else -math.inf
        return t, float(xa.size + xb.size - 2), 0.0 if t > 0 else 1.0
    t = (mean_a - mean_b) / math.sqrt(se2)
    df = se2 ** 2 / (var_a ** 2 / (xa.size ** 2 * (xa.size - 1))
                     + var_b ** 2 / (xb.size ** 2 * (xb.size - 1)))
    p = float(scipy_stats.t.sf(t, df))
    return float(t), float(df), p


def permutation_one_sided(a: Sequence[float], b: Sequence[float],
                          n_resamples: int = _MAX_EXACT_PERMUTATIONS,
                          seed: int = 0) -> tuple[float, bool]:
    """p for H1: mean(b) < mean(a) under group-label permutation.

    Enumerates all relabelings when feasible, otherwise samples
    n_resamples relabelings with the add-one correction.  Returns
    (p, exact_flag).
    """
    xa = np.asarray(a, dtype=np.float64)
    xb = np.asarray(b, dtype=np.float64)
    pooled = np.concatenate([xa, xb])
    na = xa.size
    total_sum = pooled.sum()
    n = pooled.size

    def stat_from_a_sum(sum_a: float) -> float:
        mean_a = sum_a / na
        mean_b = (total_sum - sum_a) / (n - na)
        return mean_a - mean_b

    # Same formula as the permuted statistics so the identity relabeling
    # always satisfies stat >= observed exactly.
    observed = stat_from_a_sum(float(pooled[:na].sum()))

    n_combos = math.comb(n, na)
    if n_combos <= n_resamples:
        count = 0
        for combo in combinations(range(n), na):
            if stat_from_a_sum(float(pooled[list(combo)].sum())) >= observed:
                count += 1
        return count / n_combos, True
    rng = seeding.rng(seed, "permutation-test")
    count = 0
    for _ in range(n_resamples):
        perm = rng.permutation(n)
        if stat_from_a_sum(float(pooled[perm[:na]].sum())) >= observed:
            count += 1
    return (count + 1) / (n_resamples + 1), False


def compare_runs(runs_a: Sequence[float], runs_b: Sequence[float],
                 seed: int = 0) -> ComparisonStats:
    """Relative error reduction of b over a plus both significance tests."""
    if len(runs_a) < 2 or len(runs_b) < 2:
        raise ValueError("both run sequences need length >= 2")
    t, df, p = welch_one_sided(runs_a, runs_b)
    p_perm, exact = permutation_one_sided(runs_a, runs_b, seed=seed)
    mean_a = float(np.mean(runs_a))
    mean_b = float(np.mean(runs_b))
    return ComparisonStats(
        mean_a=mean_a,
        mean_b=mean_b,
        relative_error_reduction=relative_error_reduction(mean_a, mean_b),
        t_statistic=t,
        degrees_of_freedom=df,
        p_value=p,
        p_value_permutation=p_perm,
        permutation_exact=exact,
    )

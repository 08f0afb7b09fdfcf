"""One-sided two-sample tests: Welch's t-test and the Mann-Whitney U test."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from ..errors import DegenerateTest, InsufficientData
from .distributions import normal_cdf, t_cdf

ALPHAS = (0.01, 0.001, 0.0001)
EXACT_MWU_MAX_N = 20


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str
    dof: float | None = None
    direction: str = "less"
    exact: bool = False
    significant_at: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value {self.p_value!r} outside [0, 1]")
        if not self.significant_at:
            object.__setattr__(
                self, "significant_at", {a: self.p_value < a for a in ALPHAS}
            )

    def significant(self, alpha: float) -> bool:
        return self.p_value < alpha


def _as_group(values, name):
    x = np.asarray(values, dtype=float).ravel()
    if x.size < 2:
        raise InsufficientData(f"{name} group needs at least 2 values, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise InsufficientData(f"{name} group contains non-finite values")
    return x


def _check_direction(direction):
    if direction != "less":
        raise ValueError("only the one-sided 'less' alternative is supported")


def welch_t_test(capped_values, uncapped_values, direction="less") -> TestResult:
    """Test H1: mean(capped) < mean(uncapped) without assuming equal variances."""
    _check_direction(direction)
    x1 = _as_group(capped_values, "capped")
    x0 = _as_group(uncapped_values, "uncapped")
    n1, n0 = x1.size, x0.size
    m1, m0 = x1.mean(), x0.mean()
    v1, v0 = x1.var(ddof=1), x0.var(ddof=1)
    a1, a0 = v1 / n1, v0 / n0
    se2 = a1 + a0
    if se2 == 0.0:
        if m1 == m0:
            raise DegenerateTest("both groups constant with equal means")
        t = -math.inf if m1 < m0 else math.inf
        return TestResult(t, 0.0 if t < 0 else 1.0, "welch", dof=math.nan)
    t = float((m1 - m0) / math.sqrt(se2))
    dof = float(se2**2 / (a1**2 / (n1 - 1) + a0**2 / (n0 - 1)))
    p = min(max(t_cdf(t, dof), 0.0), 1.0)
    return TestResult(t, p, "welch", dof=dof)


def _doubled_rank_sum_distribution(doubled_ranks: np.ndarray, n1: int) -> dict[int, int]:
    """Count size-``n1`` subsets by their sum of doubled midranks.

    Doubling keeps midranks of ties integral so the DP stays exact.
    """
    # counts[k][s] = number of k-subsets of the processed ranks with sum s
    total = int(doubled_ranks.sum())
    counts = np.zeros((n1 + 1, total + 1), dtype=np.int64)
    counts[0, 0] = 1
    for r in doubled_ranks.astype(int):
        for k in range(n1, 0, -1):
            counts[k, r:] = counts[k, r:] + counts[k - 1, : total + 1 - r]
    return {s: int(c) for s, c in enumerate(counts[n1]) if c}


def mann_whitney_u(capped_values, uncapped_values, direction="less", method="auto") -> TestResult:
    """Test whether capped values are stochastically smaller than uncapped ones.

    ``U`` counts (capped, uncapped) pairs with capped > uncapped, ties
    counting one half. Exact permutation p-values are used when the pooled
    sample has at most 20 values, otherwise a tie- and continuity-corrected
    normal approximation.
    """
    _check_direction(direction)
    x1 = _as_group(capped_values, "capped")
    x0 = _as_group(uncapped_values, "uncapped")
    n1, n0 = x1.size, x0.size
    n = n1 + n0
    pooled = np.concatenate([x1, x0])
    ranks = rankdata(pooled)  # midranks
    u = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    if method == "auto":
        method = "exact" if n <= EXACT_MWU_MAX_N else "normal"

    if np.all(pooled == pooled[0]):
        # every value tied: the statistic sits exactly at its null centre
        return TestResult(u, 0.5, "mann-whitney", exact=(method == "exact"))

    if method == "exact":
        dist = _doubled_rank_sum_distribution(np.rint(2 * ranks).astype(int), n1)
        observed = int(round(2 * ranks[:n1].sum()))
        hits = sum(c for s, c in dist.items() if s <= observed)
        p = hits / math.comb(n, n1)
        return TestResult(u, min(p, 1.0), "mann-whitney", exact=True)
    if method != "normal":
        raise ValueError(f"unknown method {method!r}")

    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(tie_counts**3 - tie_counts))
    var = n1 * n0 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    mu = n1 * n0 / 2.0
    z = (u - mu + 0.5) / math.sqrt(var)
    p = min(max(normal_cdf(z), 0.0), 1.0)
    return TestResult(u, p, "mann-whitney", exact=False)

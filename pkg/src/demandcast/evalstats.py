"""Paired nonparametric method comparison on absolute-error differences.

The signed-rank test here is self-contained: zeros are dropped before
ranking, ties get midranks, the p-value is exact (full enumeration of the
rank-sum distribution) for up to 25 untied survivors and a normal
approximation with continuity and tie corrections otherwise. One-sided
p-values for opposite alternatives are computed through the distribution's
symmetry, so flipping the signs of ``d`` and the alternative gives the
bit-identical p-value.

The Hodges-Lehmann estimate is the median of all Walsh averages; no
confidence interval is attached.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import MetricError

EXACT_LIMIT = 25


@dataclass(frozen=True)
class WilcoxonResult:
    n_r: int
    v: float
    p: float
    r_rb: float
    method: str


def _rankdata(values: np.ndarray) -> np.ndarray:
    """Midranks of ``values`` (average rank within tied groups)."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_counts(n: int) -> np.ndarray:
    """Counts of sign patterns per rank sum V for untied ranks 1..n."""
    smax = n * (n + 1) // 2
    counts = np.zeros(smax + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in range(1, n + 1):
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:smax + 1 - r]
        counts = counts + shifted
    return counts


def _norm_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def wilcoxon_signed_rank(d: np.ndarray, alternative: str = "two_sided"
                         ) -> WilcoxonResult:
    """Signed-rank test of the paired differences ``d``.

    ``alternative`` "less" tests whether the differences are shifted below
    zero, "greater" above, "two_sided" either way. V is the positive-rank
    sum; the rank-biserial effect size is (V - V_bar) scaled to [-1, 1].
    """
    if alternative not in ("less", "greater", "two_sided"):
        raise MetricError(f"unknown alternative {alternative!r}")
    d = np.asarray(d, dtype=np.float64)
    d = d[d != 0.0]
    n = int(d.size)
    if n == 0:
        raise MetricError("no nonzero differences to test")
    absd = np.abs(d)
    ranks = _rankdata(absd)
    v = float(np.sum(ranks[d > 0.0]))
    total = n * (n + 1) / 2.0
    has_ties = np.unique(absd).size < n
    if n <= EXACT_LIMIT and not has_ties:
        counts = _exact_counts(n)
        denom = 2.0 ** n
        vi = int(round(v))
        smax = counts.size - 1

        def cdf(k: int) -> float:
            k = min(max(k, -1), smax)
            return float(np.sum(counts[:k + 1])) / denom

        if alternative == "less":
            p = cdf(vi)
        elif alternative == "greater":
            # symmetry: P(V >= v) = P(V <= total - v)
            p = cdf(smax - vi)
        else:
            p = min(1.0, 2.0 * min(cdf(vi), cdf(smax - vi)))
        method = "exact"
    else:
        mean = total / 2.0
        tie_term = 0.0
        _, tie_counts = np.unique(absd, return_counts=True)
        tie_term = float(np.sum(tie_counts ** 3 - tie_counts)) / 2.0
        var = (n * (n + 1) * (2 * n + 1) - tie_term) / 24.0
        if var <= 0.0:
            raise MetricError("zero variance in the normal approximation")
        sd = math.sqrt(var)

        def lower_tail(value: float) -> float:
            return _norm_cdf((value - mean + 0.5) / sd)

        if alternative == "less":
            p = lower_tail(v)
        elif alternative == "greater":
            p = lower_tail(total - v)
        else:
            p = min(1.0, 2.0 * min(lower_tail(v), lower_tail(total - v)))
        method = "normal"
    r_rb = 2.0 * v / total - 1.0
    return WilcoxonResult(n_r=n, v=v, p=p, r_rb=r_rb, method=method)


def hodges_lehmann(d: np.ndarray) -> float:
    """Median of the Walsh averages (d_i + d_j)/2 over i <= j."""
    d = np.asarray(d, dtype=np.float64)
    if d.size == 0:
        raise MetricError("no differences for the Hodges-Lehmann estimate")
    sums = d[:, None] + d[None, :]
    iu = np.triu_indices(d.size)
    return float(np.median(sums[iu] / 2.0))

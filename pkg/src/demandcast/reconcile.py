"""Coherence-restoring post-processing of base forecasts.

Linear reconcilers (bottom-up, OLS, MinT-shrink) project a base forecast
vector onto the coherent subspace. ``round_posthoc`` then rounds half-up
per entry, which can break coherence again; the report it returns makes
that visible. ``reconcile_milp`` instead chooses nonnegative integer
bottom values directly, minimizing the weighted sum of absolute deviations
from the base forecasts across all nodes, so its output is coherent and
integer by construction.

The weighted-L1 integer program decomposes per period (no constraint
couples periods) and, on a tree hierarchy, also per subtree: the objective
is separable over nodes given each subtree's total. Two engines exploit
this. Small instances go through the generic branch-and-bound solver in
:mod:`demandcast.milp`; larger ones use an exact dynamic program that
propagates convex piecewise-linear cost arrays up the tree by
inf-convolution (merging sorted difference sequences). Both return a
global optimum; ties between optimal lattice points may resolve
differently, and no tie-break beyond determinism is promised.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import SolverError
from .hierarchy import CoherenceReport, SummingMatrix, check_coherence
from .milp import (
    STATUS_OPTIMAL,
    MilpProblem,
    solve_milp,
)

GAMMA_FLOOR = 1e-3
DP_THRESHOLD = 25


@dataclass(frozen=True)
class ReconWeights:
    """Per-series reliability weights, optionally with per-level priorities.

    ``gamma`` aligns with the summing-matrix row order. ``alpha`` is a
    probability vector over levels, used only by the level-weighted
    objective.
    """

    gamma: np.ndarray
    alpha: np.ndarray | None = None

    def __post_init__(self) -> None:
        g = np.asarray(self.gamma, dtype=np.float64)
        if g.ndim != 1 or not np.all(np.isfinite(g)) or np.any(g < 0.0):
            raise SolverError("gamma must be a finite nonnegative vector")
        object.__setattr__(self, "gamma", g)
        if self.alpha is not None:
            a = np.asarray(self.alpha, dtype=np.float64)
            if a.ndim != 1 or np.any(a < 0.0) or abs(float(a.sum()) - 1.0) > 1e-9:
                raise SolverError("alpha must be a probability vector over levels")
            object.__setattr__(self, "alpha", a)

    def series_weights(self, row_levels: tuple[int, ...],
                       level_weighted: bool) -> np.ndarray:
        if not level_weighted:
            return self.gamma
        if self.alpha is None:
            raise SolverError("level-weighted objective needs alpha")
        levels = np.asarray(row_levels, dtype=np.intp)
        if levels.size != self.gamma.size:
            raise SolverError("row levels and gamma disagree in length")
        if np.any(levels >= self.alpha.size):
            raise SolverError("alpha has fewer entries than there are levels")
        return self.gamma * self.alpha[levels]


@dataclass(frozen=True)
class CovarianceSpec:
    """Base-error covariance and its shrinkage intensity toward the diagonal."""

    sigma: np.ndarray
    shrink_lambda: float

    def __post_init__(self) -> None:
        s = np.asarray(self.sigma, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise SolverError("sigma must be square")
        if not np.allclose(s, s.T, atol=1e-10):
            raise SolverError("sigma must be symmetric")
        if not 0.0 <= self.shrink_lambda <= 1.0:
            raise SolverError("shrink_lambda must lie in [0, 1]")
        object.__setattr__(self, "sigma", (s + s.T) / 2.0)

    def shrunk(self) -> np.ndarray:
        lam = self.shrink_lambda
        return (1.0 - lam) * self.sigma + lam * np.diag(np.diag(self.sigma))


@dataclass
class ReconciliationResult:
    """Integer-coherent reconciliation output with solver accounting."""

    values: np.ndarray
    bottom: np.ndarray
    objective: float
    node_counts: list[int]
    wall_times: list[float]
    engine: str


def _as_matrix(base: np.ndarray, n_rows: int) -> tuple[np.ndarray, bool]:
    base = np.asarray(base, dtype=np.float64)
    squeeze = base.ndim == 1
    if squeeze:
        base = base[:, None]
    if base.shape[0] != n_rows:
        raise SolverError(
            f"base forecast has {base.shape[0]} rows, summing matrix {n_rows}"
        )
    return base, squeeze


def reconcile_bu(base: np.ndarray, s: SummingMatrix) -> np.ndarray:
    """Overwrite upper levels with sums of the base bottom slice."""
    mat, squeeze = _as_matrix(base, s.n_rows)
    out = s.entries @ mat[s.bottom_row_positions()]
    return out[:, 0] if squeeze else out


def reconcile_ols(base: np.ndarray, s: SummingMatrix) -> np.ndarray:
    """Orthogonal projection onto the coherent subspace."""
    mat, squeeze = _as_matrix(base, s.n_rows)
    gram = s.entries.T @ s.entries
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise SolverError("summing matrix is rank deficient") from exc
    rhs = s.entries.T @ mat
    b = _chol_solve(chol, rhs)
    out = s.entries @ b
    return out[:, 0] if squeeze else out


def reconcile_mint(base: np.ndarray, s: SummingMatrix,
                   cov: CovarianceSpec) -> np.ndarray:
    """Oblique projection weighted by the inverse shrunk covariance."""
    mat, squeeze = _as_matrix(base, s.n_rows)
    shrunk = cov.shrunk()
    if shrunk.shape[0] != s.n_rows:
        raise SolverError("covariance size disagrees with the hierarchy")
    try:
        w = np.linalg.inv(np.linalg.cholesky(shrunk))
        w = w.T @ w
    except np.linalg.LinAlgError as exc:
        raise SolverError("shrunk covariance is not positive definite") from exc
    m = s.entries.T @ w @ s.entries
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise SolverError("weighted normal matrix is not positive definite") from exc
    b = _chol_solve(chol, s.entries.T @ (w @ mat))
    out = s.entries @ b
    return out[:, 0] if squeeze else out


def _chol_solve(chol: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    from numpy.linalg import solve
    # two triangular solves via the factor; numpy lacks a dedicated routine
    return solve(chol.T, solve(chol, rhs))


def round_posthoc(values: np.ndarray, s: SummingMatrix,
                  tol: float = 1e-7) -> tuple[np.ndarray, CoherenceReport]:
    """Half-up rounding per entry, with coherence re-checked afterwards.

    Rounding a coherent fractional vector can leave the sums broken; the
    returned report says whether that happened.
    """
    mat, squeeze = _as_matrix(values, s.n_rows)
    rounded = np.floor(mat + 0.5)
    worst = CoherenceReport(ok=True, max_violation=0.0)
    for t in range(rounded.shape[1]):
        rep = check_coherence(s, rounded[:, t], tol=tol)
        if rep.max_violation > worst.max_violation:
            worst = rep
    if squeeze:
        return rounded[:, 0], worst
    return rounded, worst


def gamma_from_validation(wmape_per_series: np.ndarray,
                          floor: float = GAMMA_FLOOR) -> np.ndarray:
    """Reliability weights as reciprocal validation WMAPE, floored."""
    w = np.asarray(wmape_per_series, dtype=np.float64)
    return 1.0 / np.maximum(w, floor)


def alpha_from_bottom_weight(n_levels: int, bottom_weight: float) -> np.ndarray:
    """Level priorities with the given mass on the bottom level.

    The remaining mass is split equally over the upper levels.
    """
    if not 0.0 <= bottom_weight <= 1.0:
        raise SolverError("bottom weight must lie in [0, 1]")
    if n_levels < 2:
        raise SolverError("level weighting needs at least two levels")
    alpha = np.full(n_levels, (1.0 - bottom_weight) / (n_levels - 1))
    alpha[-1] = bottom_weight
    return alpha


def estimate_covariance(residuals: np.ndarray, shrink_lambda: float,
                        variance_floor: float = 1e-8) -> CovarianceSpec:
    """Empirical covariance of base-error rows with a variance floor.

    ``residuals`` has one row per observation and one column per series.
    The floor keeps the shrunk matrix positive definite when a series has
    constant errors.
    """
    r = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
    if r.shape[0] < 2:
        raise SolverError("covariance estimation needs at least two observations")
    centered = r - r.mean(axis=0, keepdims=True)
    sigma = centered.T @ centered / r.shape[0]
    floor = variance_floor * max(1.0, float(np.mean(np.diag(sigma))))
    sigma[np.diag_indices_from(sigma)] += floor
    return CovarianceSpec(sigma=sigma, shrink_lambda=shrink_lambda)


# ---------------------------------------------------------------------------
# weighted-L1 integer projection


def _integer_box_hi(base_col: np.ndarray) -> float:
    return max(float(np.ceil(2.0 * np.max(np.maximum(base_col, 0.0)))), 10.0)


def _solve_col_milp(s: SummingMatrix, yhat: np.ndarray, w: np.ndarray,
                    hi: float, fixed_rows: dict[int, int]) -> tuple[np.ndarray, int]:
    n, nb = s.n_rows, s.n_bottom
    nvar = nb + n
    c = np.concatenate([np.zeros(nb), w])
    rows, rels, rhs = [], [], []
    for i in range(n):
        r1 = np.zeros(nvar)
        r1[:nb] = s.entries[i]
        r1[nb + i] = -1.0
        rows.append(r1)
        rels.append("<=")
        rhs.append(yhat[i])
        r2 = np.zeros(nvar)
        r2[:nb] = -s.entries[i]
        r2[nb + i] = -1.0
        rows.append(r2)
        rels.append("<=")
        rhs.append(-yhat[i])
    for i, val in fixed_rows.items():
        r = np.zeros(nvar)
        r[:nb] = s.entries[i]
        rows.append(r)
        rels.append("=")
        rhs.append(float(val))
    lo = np.zeros(nvar)
    up = np.concatenate([np.full(nb, hi), np.full(n, np.inf)])
    flags = np.array([True] * nb + [False] * n)
    p = MilpProblem(c, np.array(rows), tuple(rels), rhs, lo, up, flags)
    sol = solve_milp(p)
    if sol.status != STATUS_OPTIMAL:
        raise SolverError(f"integer reconciliation not optimal: {sol.status}")
    return np.round(sol.values[:nb]), sol.node_count


def _tree_structure(s: SummingMatrix) -> tuple[int, list[list[int]]] | None:
    """Recover the tree as (root row, children rows per row), or None.

    Works by chaining each bottom column's ancestor rows in decreasing
    leaf-set size, then verifying that every internal row is exactly the
    sum of its children's rows.
    """
    sizes = s.entries.sum(axis=1)
    levels = np.asarray(s.row_levels, dtype=np.int64)
    if levels.size != s.n_rows:
        return None
    n = s.n_rows
    children: list[set[int]] = [set() for _ in range(n)]
    roots: set[int] = set()
    for j in range(s.n_bottom):
        chain = np.nonzero(s.entries[:, j])[0]
        # single-child parents tie on size; deeper level goes first
        chain = chain[np.lexsort((-levels[chain], sizes[chain]))]
        for lower, upper in zip(chain[:-1], chain[1:]):
            children[upper].add(int(lower))
        roots.add(int(chain[-1]))
    if len(roots) != 1:
        return None
    root = roots.pop()
    out = [sorted(c) for c in children]
    for i in range(n):
        if out[i]:
            if not np.array_equal(np.sum(s.entries[out[i]], axis=0),
                                  s.entries[i]):
                return None
        elif sizes[i] != 1.0:
            return None
    return root, out


def _solve_col_dp(s: SummingMatrix, yhat: np.ndarray, w: np.ndarray,
                  hi: float, fixed_rows: dict[int, int],
                  tree: tuple[int, list[list[int]]]) -> tuple[np.ndarray, int]:
    """Exact DP over the tree with convex piecewise-linear cost arrays.

    Each node's array gives, per candidate subtree total v, the minimum
    weighted deviation cost inside that subtree. Children are combined by
    inf-convolution, which for convex sequences is a sorted merge of their
    difference sequences; tie increments prefer the accumulated side, which
    keeps backtracking deterministic.
    """
    root, children = tree
    # Some optimum keeps every bottom value at or below ceil(max yhat):
    # shrinking any larger value weakly improves every deviation term. The
    # tighter box changes nothing but tie resolution, and saves most of the
    # array width when the root forecast dwarfs the leaves.
    hi_int = int(min(hi, max(np.ceil(np.max(np.maximum(yhat, 0.0))) + 1.0, 10.0)))
    n = s.n_bottom

    def own_cost(i: int, lo_v: int, hi_v: int) -> np.ndarray:
        v = np.arange(lo_v, hi_v + 1, dtype=np.float64)
        return w[i] * np.abs(v - yhat[i])

    # post-order traversal without recursion
    order: list[int] = []
    stack = [root]
    while stack:
        node = stack.pop()
        order.append(node)
        stack.extend(children[node])
    order.reverse()

    offsets: dict[int, int] = {}
    merge_offsets: dict[int, int] = {}
    arrays: dict[int, np.ndarray] = {}
    merges: dict[int, list[np.ndarray]] = {}
    for node in order:
        kids = children[node]
        if not kids:
            off, arr = 0, own_cost(node, 0, hi_int)
        else:
            off = offsets[kids[0]]
            arr = arrays[kids[0]].copy()
            steps: list[np.ndarray] = []
            for kid in kids[1:]:
                arr, cum_left = _convolve_convex(arr, arrays[kid])
                off += offsets[kid]
                steps.append(cum_left)
            merges[node] = steps
            arr = arr + own_cost(node, off, off + arr.size - 1)
        merge_offsets[node] = off
        if node in fixed_rows:
            v = fixed_rows[node]
            rel = v - off
            if rel < 0 or rel >= arr.size:
                raise SolverError(
                    f"fixed value {v} for row {s.row_ids[node]!r} is infeasible"
                )
            off, arr = v, arr[rel:rel + 1]
        offsets[node] = off
        arrays[node] = arr

    b = np.zeros(n)
    bottom_pos = {int(p): j for j, p in enumerate(s.bottom_row_positions())}

    def assign(node: int, value: int) -> None:
        todo = [(node, value)]
        while todo:
            nd, val = todo.pop()
            kids = children[nd]
            if not kids:
                b[bottom_pos[nd]] = val
                continue
            rel = val - merge_offsets[nd]
            for kid, cum_left in zip(reversed(kids[1:]),
                                     reversed(merges[nd])):
                left = int(cum_left[rel])
                todo.append((kid, offsets[kid] + (rel - left)))
                rel = left
            todo.append((kids[0], offsets[kids[0]] + rel))

    root_arr = arrays[root]
    k = int(np.argmin(root_arr))
    assign(root, offsets[root] + k)
    return b, 0


def _convolve_convex(f: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inf-convolution of convex sequences, plus left-share counts.

    Returns the combined array h with h[k] = min_{i+j=k} f[i]+g[j] and, for
    each k, how many of the k increments came from f (monotone, so the
    argmin split is recoverable exactly).
    """
    df = np.diff(f)
    dg = np.diff(g)
    merged = np.concatenate([df, dg])
    src = np.concatenate([np.zeros(df.size, dtype=np.int64),
                          np.ones(dg.size, dtype=np.int64)])
    order = np.argsort(merged, kind="stable")
    h = np.empty(f.size + g.size - 1)
    h[0] = f[0] + g[0]
    if order.size:
        np.cumsum(merged[order], out=h[1:])
        h[1:] += h[0]
    cum_left = np.zeros(h.size, dtype=np.int64)
    if order.size:
        np.cumsum(1 - src[order], out=cum_left[1:])
    return h, cum_left


def reconcile_milp(base: np.ndarray, s: SummingMatrix, weights: ReconWeights,
                   level_weighted: bool = False,
                   fixed: dict[str, int] | None = None,
                   engine: str = "auto") -> ReconciliationResult:
    """Project base forecasts onto coherent nonnegative integer vectors.

    Minimizes the average over nodes and periods of the weighted absolute
    deviation from the base forecast, one independent solve per period.
    ``fixed`` optionally pins named rows to given integer totals. The
    ``engine`` is "milp", "dp", or "auto" (dp for wide hierarchies).
    """
    mat, squeeze = _as_matrix(base, s.n_rows)
    n, horizon = mat.shape
    w = weights.series_weights(s.row_levels, level_weighted)
    if w.size != n:
        raise SolverError("weight vector length disagrees with the hierarchy")
    if engine not in ("auto", "milp", "dp"):
        raise SolverError(f"unknown engine {engine!r}")
    row_idx = s.row_index()
    fixed_rows: dict[int, int] = {}
    for rid, val in (fixed or {}).items():
        if rid not in row_idx:
            raise SolverError(f"fixed row {rid!r} is not in the hierarchy")
        fixed_rows[row_idx[rid]] = int(val)
    tree = _tree_structure(s) if engine != "milp" else None
    use_dp = engine == "dp" or (engine == "auto" and tree is not None
                                and s.n_bottom > DP_THRESHOLD)
    if engine == "dp" and tree is None:
        raise SolverError("dp engine needs a tree-structured hierarchy")

    bottoms = np.zeros((s.n_bottom, horizon))
    node_counts: list[int] = []
    wall_times: list[float] = []
    total = 0.0
    for t in range(horizon):
        col = mat[:, t]
        hi = _integer_box_hi(col)
        started = time.perf_counter()
        try:
            if use_dp:
                b, nodes = _solve_col_dp(s, col, w, hi, fixed_rows, tree)
            else:
                b, nodes = _solve_col_milp(s, col, w, hi, fixed_rows)
        except SolverError as exc:
            raise SolverError(f"period {t}: {exc}") from exc
        wall_times.append(time.perf_counter() - started)
        node_counts.append(nodes)
        bottoms[:, t] = b
        total += float(w @ np.abs(s.entries @ b - col))
    values = s.entries @ bottoms
    result_values = values[:, 0] if squeeze else values
    result_bottom = bottoms[:, 0] if squeeze else bottoms
    return ReconciliationResult(
        values=result_values,
        bottom=result_bottom,
        objective=total / (n * horizon),
        node_counts=node_counts,
        wall_times=wall_times,
        engine="dp" if use_dp else "milp",
    )

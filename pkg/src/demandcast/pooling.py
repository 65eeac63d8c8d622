"""Candidate pools, pool costs, and exact pooling-set selection.

A candidate is a grouping of series (one family of sub-pools trained
together); opening it costs kappa = s * M * (1 + nu * G) where M counts
the models the family trains and G measures how unevenly its members
contribute data.  Selection selects one pool per series by minimizing
relative validation loss plus lambda times the opening costs, solved
exactly: enumeration over open-sets while the costly-candidate count is
small, an integer program otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DataError, MetricError
from .features import FeatureConfig
from .metrics import MetricInput, QuantileGrid, mspl
from .milp import MilpProblem, solve_milp
from .panel import PanelSeries, SplitPlan, rolling_windows, slice_series
from .strategies import (
    DRFAM_STRATEGIES,
    EXOG_HOLD,
    PoolAssignment,
    QuantileLearner,
    drfam_pp,
)

ENUMERATION_LIMIT = 20
_TIE_TOL = 1e-12


def gini_imbalance(sample_shares: Iterable[float]) -> float:
    """Gini coefficient of a nonnegative share vector.

    Mean absolute difference over twice the mean: sum |x_i - x_j| over all
    ordered pairs, divided by 2 n^2 mu.  Equal shares give 0; a vector of
    length n with all mass on one entry gives (n-1)/n.
    """
    x = np.asarray(list(sample_shares), dtype=np.float64)
    if x.size == 0:
        raise DataError("share vector is empty")
    if np.any(x < 0.0) or not np.all(np.isfinite(x)):
        raise DataError("shares must be finite and nonnegative")
    total = float(x.sum())
    if total <= 0.0:
        raise DataError("shares must have positive sum")
    n = x.size
    diff_sum = float(np.abs(x[:, None] - x[None, :]).sum())
    return diff_sum / (2.0 * n * n * (total / n))


def pool_cost(model_count: int, gini: float, s: float, nu: float) -> float:
    """Opening cost kappa = s * M * (1 + nu * G)."""
    if model_count < 1:
        raise DataError("model count must be at least 1")
    if not (0.0 <= gini < 1.0):
        raise DataError(f"gini {gini!r} outside [0, 1)")
    if s < 0.0 or nu < 0.0:
        raise DataError("cost scale and imbalance weight must be nonnegative")
    return s * model_count * (1.0 + nu * gini)


@dataclass(frozen=True)
class PoolCandidate:
    """One openable pooling scheme: a partition of its members into the
    sub-pools that would be trained together."""

    id: str
    members: tuple[str, ...]
    model_count: int
    gini: float
    cost: float
    groups: tuple[tuple[str, tuple[str, ...]], ...] = ()

    def __post_init__(self) -> None:
        if not self.id:
            raise DataError("candidate id must be non-empty")
        if not self.members:
            raise DataError(f"candidate {self.id!r} has no members")
        if len(set(self.members)) != len(self.members):
            raise DataError(f"candidate {self.id!r} repeats a member")
        if self.model_count < 1:
            raise DataError(f"candidate {self.id!r}: model count must be >= 1")
        if not (0.0 <= self.gini < 1.0):
            raise DataError(f"candidate {self.id!r}: gini outside [0, 1)")
        if self.cost < 0.0:
            raise DataError(f"candidate {self.id!r}: negative cost")
        if not self.groups:
            object.__setattr__(self, "groups", (("all", self.members),))
        grouped = [m for _, ms in self.groups for m in ms]
        if sorted(grouped) != sorted(self.members):
            raise DataError(
                f"candidate {self.id!r}: groups must partition the members"
            )

    @property
    def is_singleton(self) -> bool:
        return len(self.members) == 1


def build_candidate(candidate_id: str,
                    groups: Sequence[tuple[str, Sequence[str]]],
                    *, s: float, nu: float = 1.0,
                    sample_weights: dict[str, float] | None = None
                    ) -> PoolCandidate:
    """Candidate with auto-computed cost: one model per group, imbalance
    from the members' sample weights (default: one unit each)."""
    norm_groups = tuple((gid, tuple(ms)) for gid, ms in groups)
    members = tuple(m for _, ms in norm_groups for m in ms)
    weights = sample_weights or {}
    shares = [float(weights.get(m, 1.0)) for m in members]
    g = gini_imbalance(shares) if len(members) > 1 else 0.0
    m_count = len(norm_groups)
    return PoolCandidate(
        id=candidate_id,
        members=members,
        model_count=m_count,
        gini=g,
        cost=pool_cost(m_count, g, s, nu),
        groups=norm_groups,
    )


def singleton_candidates(series_ids: Iterable[str]) -> list[PoolCandidate]:
    """The free no-pooling fallback: one zero-cost candidate per series."""
    out = []
    for sid in series_ids:
        out.append(PoolCandidate(
            id=f"single/{sid}", members=(sid,), model_count=1,
            gini=0.0, cost=0.0, groups=((sid, (sid,)),),
        ))
    return out


@dataclass(frozen=True)
class PoolLossTable:
    """Validation losses per (series, candidate) plus the per-series
    no-pooling baseline the relative losses are measured against."""

    losses: dict[tuple[str, str], float]
    baseline: dict[str, float]

    def __post_init__(self) -> None:
        if not self.baseline:
            raise DataError("loss table covers no series")
        for sid, v in self.baseline.items():
            if not np.isfinite(v):
                raise DataError(f"baseline loss for {sid!r} is not finite")
        for (sid, pid), v in self.losses.items():
            if not np.isfinite(v):
                raise DataError(f"loss for ({sid!r}, {pid!r}) is not finite")
            if sid not in self.baseline:
                raise DataError(f"loss entry for unknown series {sid!r}")

    def series_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.baseline))

    def relative(self, sid: str, pool_id: str) -> float:
        if (sid, pool_id) not in self.losses:
            raise DataError(f"no loss entry for ({sid!r}, {pool_id!r})")
        return self.losses[sid, pool_id] - self.baseline[sid]


@dataclass(frozen=True)
class SelectionResult:
    """One pooling decision: where each series goes, which pools are in
    use, and the achieved objective value."""

    assignment: dict[str, str]
    open_ids: tuple[str, ...]
    objective: float


def _loss_matrix(table: PoolLossTable, candidates: Sequence[PoolCandidate]
                 ) -> tuple[list[str], np.ndarray]:
    ids = [c.id for c in candidates]
    if len(set(ids)) != len(ids):
        raise DataError("candidate ids must be unique")
    series = list(table.series_ids())
    rel = np.full((len(series), len(candidates)), np.inf)
    for i, sid in enumerate(series):
        for g, cand in enumerate(candidates):
            if sid in cand.members and (sid, cand.id) in table.losses:
                rel[i, g] = table.relative(sid, cand.id)
    uncovered = [series[i] for i in range(len(series))
                 if not np.any(np.isfinite(rel[i]))]
    if uncovered:
        raise DataError(f"series not covered by any candidate: {uncovered}")
    return series, rel


def _pick_pool(rel_row: np.ndarray, allowed: np.ndarray,
               candidates: Sequence[PoolCandidate]) -> int:
    """Cheapest allowed pool for one series; ties go to the pool with more
    members, then the lexicographically smallest id."""
    usable = np.flatnonzero(allowed & np.isfinite(rel_row))
    best = usable[np.argmin(rel_row[usable])]
    best_val = rel_row[best]
    tied = [g for g in usable if rel_row[g] <= best_val + _TIE_TOL]
    tied.sort(key=lambda g: (-len(candidates[g].members), candidates[g].id))
    return tied[0]


def _finish(series: list[str], rel: np.ndarray,
            candidates: Sequence[PoolCandidate], lam: float,
            allowed: np.ndarray) -> SelectionResult:
    """Assignment, used-pool set, and objective for a fixed open set."""
    assignment = {}
    used: set[int] = set()
    total = 0.0
    for i, sid in enumerate(series):
        g = _pick_pool(rel[i], allowed, candidates)
        assignment[sid] = candidates[g].id
        used.add(g)
        total += rel[i, g]
    open_ids = tuple(candidates[g].id for g in sorted(used))
    used_cost = sum(candidates[g].cost for g in used)
    if used_cost > 0.0:
        total += lam * used_cost
    return SelectionResult(assignment, open_ids, float(total))


def solve_pool_selection(table: PoolLossTable,
                         candidates: Sequence[PoolCandidate],
                         lam: float, *,
                         enumeration_limit: int = ENUMERATION_LIMIT
                         ) -> SelectionResult:
    """Globally optimal pooling under relative losses.

    Minimizes sum of assigned relative losses plus ``lam`` times the cost
    of every pool in use.  Zero-cost candidates may always stay available
    (opening them never changes the objective), so only subsets of the
    costly candidates are enumerated; past ``enumeration_limit`` of those
    the problem is handed to the integer-program solver.  Reported open
    pools are the ones the assignment actually uses.
    """
    if lam < 0.0:
        raise DataError("lambda must be nonnegative")
    series, rel = _loss_matrix(table, candidates)
    costs = np.array([c.cost for c in candidates])
    costly = np.flatnonzero(costs > 0.0)
    free_allowed = costs <= 0.0

    if costly.size > enumeration_limit:
        return _solve_by_milp(series, rel, candidates, lam, costly, free_allowed)

    n_sub = 1 << costly.size
    best_obj = np.inf
    best_subsets: list[int] = []
    # per-series loss over free pools only; a subset improves on this only
    # through the costly pools it opens
    free_min = np.where(free_allowed[None, :], rel, np.inf).min(axis=1)
    costly_rel = rel[:, costly] if costly.size else rel[:, :0]
    cell = max(1, len(series) * max(costly.size, 1))
    chunk = int(min(4096, max(64, 4_000_000 // cell)))
    for start in range(0, n_sub, chunk):
        codes = np.arange(start, min(start + chunk, n_sub))
        open_mask = (codes[:, None] >> np.arange(costly.size)[None, :]) & 1
        # (chunk, n_series): min over opened costly pools
        opened = np.where(open_mask[:, None, :] == 1,
                          costly_rel[None, :, :], np.inf)
        mins = np.minimum(opened.min(axis=2, initial=np.inf),
                          free_min[None, :])
        cost_term = (open_mask @ costs[costly]).astype(np.float64)
        # guard 0 * inf when lambda is infinite
        penalty = np.zeros_like(cost_term)
        pos = cost_term > 0.0
        penalty[pos] = lam * cost_term[pos]
        obj = mins.sum(axis=1) + penalty
        finite = obj[np.isfinite(obj)]
        lo = float(finite.min()) if finite.size else np.inf
        if lo < best_obj - _TIE_TOL:
            best_obj = lo
            best_subsets = []
        if np.isfinite(best_obj):
            near = np.flatnonzero(obj <= best_obj + _TIE_TOL)
            best_subsets.extend(int(codes[j]) for j in near)
    if not np.isfinite(best_obj):
        raise DataError("no feasible assignment exists")

    # among objective ties prefer fewer used pools, then the smallest
    # sorted id tuple, judged on the induced assignment
    best: SelectionResult | None = None
    best_key = None
    for code in best_subsets:
        allowed = free_allowed.copy()
        allowed[costly[(code >> np.arange(costly.size)) & 1 == 1]] = True
        result = _finish(series, rel, candidates, lam, allowed)
        key = (len(result.open_ids), result.open_ids)
        if best is None or result.objective < best.objective - _TIE_TOL or (
                result.objective <= best.objective + _TIE_TOL and key < best_key):
            best, best_key = result, key
    assert best is not None
    return best


def _solve_by_milp(series: list[str], rel: np.ndarray,
                   candidates: Sequence[PoolCandidate], lam: float,
                   costly: np.ndarray, free_allowed: np.ndarray
                   ) -> SelectionResult:
    """Binary program: assignment vars per usable (series, pool) pair and
    an open var per costly pool, linked by x <= y rows."""
    pairs = [(i, int(g)) for i in range(len(series))
             for g in np.flatnonzero(np.isfinite(rel[i]))]
    pair_pos = {p: j for j, p in enumerate(pairs)}
    open_pos = {int(g): len(pairs) + j for j, g in enumerate(costly)}
    n_var = len(pairs) + costly.size

    c = np.zeros(n_var)
    for j, (i, g) in enumerate(pairs):
        c[j] = rel[i, g]
    for g, j in open_pos.items():
        c[j] = lam * candidates[g].cost

    rows, rhs, rels = [], [], []
    for i in range(len(series)):
        row = np.zeros(n_var)
        for g in np.flatnonzero(np.isfinite(rel[i])):
            row[pair_pos[i, int(g)]] = 1.0
        rows.append(row)
        rhs.append(1.0)
        rels.append("=")
    for j, (i, g) in enumerate(pairs):
        if g in open_pos:
            row = np.zeros(n_var)
            row[j] = 1.0
            row[open_pos[g]] = -1.0
            rows.append(row)
            rhs.append(0.0)
            rels.append("<=")

    problem = MilpProblem(
        objective=c, constraints=np.array(rows), relations=tuple(rels),
        rhs=np.array(rhs), lower=np.zeros(n_var), upper=np.ones(n_var),
        integer=np.ones(n_var, dtype=bool),
    )
    solution = solve_milp(problem)
    if solution.status != "optimal":
        raise DataError(f"pool selection solve ended {solution.status}")
    allowed = free_allowed.copy()
    for g, j in open_pos.items():
        if solution.values[j] > 0.5:
            allowed[g] = True
    return _finish(series, rel, candidates, lam, allowed)


@dataclass(frozen=True)
class FrontierPoint:
    """One lambda's solution summary on the accuracy-complexity frontier."""

    lam: float
    mean_relative_loss: float
    pools_opened: int
    open_ids: tuple[str, ...]
    objective: float


def lambda_frontier(table: PoolLossTable,
                    candidates: Sequence[PoolCandidate],
                    lambda_grid: Sequence[float], *,
                    enumeration_limit: int = ENUMERATION_LIMIT
                    ) -> list[FrontierPoint]:
    """One exact solve per lambda; ``pools_opened`` counts open pools with
    positive cost (free singletons are always available and not counted)."""
    if len(lambda_grid) == 0:
        raise DataError("lambda grid is empty")
    by_id = {c.id: c for c in candidates}
    out = []
    for lam in lambda_grid:
        result = solve_pool_selection(table, candidates, float(lam),
                                      enumeration_limit=enumeration_limit)
        rel_losses = [table.relative(sid, pid)
                      for sid, pid in result.assignment.items()]
        n_costly = sum(1 for pid in result.open_ids if by_id[pid].cost > 0.0)
        out.append(FrontierPoint(
            lam=float(lam),
            mean_relative_loss=float(np.mean(rel_losses)),
            pools_opened=n_costly,
            open_ids=result.open_ids,
            objective=result.objective,
        ))
    return out


def frontier_elbow(points: Sequence[FrontierPoint]) -> float:
    """Lambda at the largest second difference of mean relative loss along
    the frontier (the classic elbow pick)."""
    if len(points) < 3:
        raise DataError("elbow detection needs at least three frontier points")
    pts = sorted(points, key=lambda p: p.lam)
    loss = np.array([p.mean_relative_loss for p in pts])
    second = loss[2:] - 2.0 * loss[1:-1] + loss[:-2]
    return pts[int(np.argmax(second)) + 1].lam


def calibrate_s(table: PoolLossTable,
                candidates: Sequence[PoolCandidate], nu: float = 1.0) -> float:
    """Cost scale making the mean auto-computed kappa over the given
    candidates equal the mean absolute relative loss of their entries."""
    rel_abs = []
    weights = []
    for cand in candidates:
        weights.append(cand.model_count * (1.0 + nu * cand.gini))
        for sid in cand.members:
            if (sid, cand.id) in table.losses:
                rel_abs.append(abs(table.relative(sid, cand.id)))
    if not rel_abs:
        raise DataError("no loss entries for the given candidates")
    denom = float(np.mean(weights))
    if denom <= 0.0:
        raise DataError("degenerate candidate weights")
    return float(np.mean(rel_abs)) / denom


def selection_to_pools(result: SelectionResult,
                       candidates: Sequence[PoolCandidate]) -> PoolAssignment:
    """Expand the chosen candidates into the concrete sub-pools each series
    trains with; every series lands in exactly one active pool."""
    by_id = {c.id: c for c in candidates}
    pools = []
    for pid in result.open_ids:
        cand = by_id[pid]
        for gid, members in cand.groups:
            kept = tuple(m for m in members if result.assignment.get(m) == pid)
            if kept:
                pools.append((f"{pid}/{gid}", kept))
    return PoolAssignment(tuple(pools), tuple(True for _ in pools))


def build_loss_table(panel: list[PanelSeries],
                     candidates: Sequence[PoolCandidate],
                     plan: SplitPlan,
                     learner_factory: Callable[[], QuantileLearner],
                     grid: QuantileGrid, *,
                     strategies: tuple[str, ...] = DRFAM_STRATEGIES,
                     feature_config: FeatureConfig | None = None,
                     exog_policy: str = EXOG_HOLD,
                     skip_unscorable: bool = False
                     ) -> tuple[PoolLossTable, list[str]]:
    """Rolling-origin validation losses for every (series, candidate) pair.

    Per fold and candidate, the candidate's sub-pools are trained on the
    fold's training months and scored on the held-out horizon with the
    scaled pinball loss averaged over the grid; fold scores are averaged.
    Baselines come from each series' singleton candidate, which therefore
    must be present.  Returns the table plus the ids of series dropped as
    unscorable (only when ``skip_unscorable`` is set; otherwise scoring
    failures raise).
    """
    by_id = {s.series_id: s for s in panel}
    if len(by_id) != len(panel):
        raise DataError("duplicate series ids in panel")
    lengths = {s.length for s in panel}
    if len(lengths) != 1:
        raise DataError("loss table needs series of equal length")
    folds = rolling_windows(plan, lengths.pop())

    def fold_scores(cand: PoolCandidate, members: tuple[str, ...]
                    ) -> dict[str, float]:
        sums = {m: 0.0 for m in members}
        for train, test in folds:
            sliced = [slice_series(by_id[m], train.stop) for m in members]
            pa = PoolAssignment(
                tuple((gid, tuple(m for m in ms if m in members))
                      for gid, ms in cand.groups
                      if any(m in members for m in ms)),
                tuple(True for _, ms in cand.groups
                      if any(m in members for m in ms)),
            )
            fc = drfam_pp(sliced, pa, learner_factory, plan.horizon, grid,
                          strategies=strategies,
                          feature_config=feature_config,
                          exog_policy=exog_policy)
            for m in members:
                s = by_id[m]
                m_in = MetricInput(s.target[: train.stop],
                                   s.target[test.start: test.stop],
                                   fc.array(m))
                sums[m] += mspl(m_in, grid)
        return {m: v / len(folds) for m, v in sums.items()}

    dropped: list[str] = []
    if skip_unscorable:
        for s in panel:
            try:
                for train, _ in folds:
                    MetricInput(s.target[: train.stop],
                                np.zeros(plan.horizon),
                                np.zeros(plan.horizon))
                    from .metrics import _naive_scale
                    _naive_scale(s.target[: train.stop], squared=False)
            except MetricError:
                dropped.append(s.series_id)
    keep = set(by_id) - set(dropped)

    losses: dict[tuple[str, str], float] = {}
    baseline: dict[str, float] = {}
    for cand in candidates:
        members = tuple(m for m in cand.members if m in keep)
        if not members:
            continue
        missing = [m for m in cand.members if m not in by_id]
        if missing:
            raise DataError(
                f"candidate {cand.id!r} names unknown series: {missing}"
            )
        try:
            scores = fold_scores(cand, members)
        except MetricError as exc:
            raise DataError(
                f"candidate {cand.id!r} cannot be scored: {exc}"
            ) from exc
        for m, v in scores.items():
            losses[m, cand.id] = v
            if cand.is_singleton:
                baseline[m] = v
    no_base = sorted(keep - set(baseline))
    if no_base:
        raise DataError(
            f"series without a singleton candidate: {no_base}"
        )
    return PoolLossTable(losses, baseline), dropped

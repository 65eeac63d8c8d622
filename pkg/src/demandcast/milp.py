"""Small exact MILP solver: bounded-variable simplex plus branch-and-bound.

Self-contained on purpose. The instances solved here are small (a few
hundred variables with small-integer magnitudes), so a dense two-phase
tableau simplex with explicit tolerances is enough, and double precision
replaces exact rational arithmetic. Branch-and-bound is best-first,
branching on the most fractional integer variable with ties broken by the
lowest index. Identical problems yield identical solutions and node counts.

No cutting planes and no presolve beyond the bounds the caller supplies;
callers decompose their programs into per-period pieces before solving.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import SolverError

FEAS_TOL = 1e-7
INT_TOL = 1e-6
_DUAL_TOL = 1e-9
_PIVOT_TOL = 1e-10

LE, EQ, GE = -1, 0, 1
_REL_CODES = {"<=": LE, "=": EQ, ">=": GE}
_REL_NAMES = {LE: "<=", EQ: "=", GE: ">="}

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_UNBOUNDED = "unbounded"
STATUS_ITERATION_LIMIT = "iteration_limit"


@dataclass(frozen=True)
class MilpProblem:
    """Minimize objective @ x subject to row relations and variable bounds.

    ``relations`` holds one of "<=", "=", ">=" per constraint row. Integer
    variables must have finite bounds on both sides.
    """

    objective: np.ndarray
    constraints: np.ndarray
    relations: tuple[str, ...]
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    integer: np.ndarray

    def __post_init__(self) -> None:
        obj = np.asarray(self.objective, dtype=np.float64)
        a = np.atleast_2d(np.asarray(self.constraints, dtype=np.float64))
        rhs = np.asarray(self.rhs, dtype=np.float64)
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        flags = np.asarray(self.integer, dtype=bool)
        n = obj.size
        if a.size == 0:
            a = a.reshape(0, n)
        if a.shape[1] != n:
            raise SolverError(
                f"constraint matrix has {a.shape[1]} columns for {n} variables"
            )
        if rhs.size != a.shape[0] or len(self.relations) != a.shape[0]:
            raise SolverError("constraint rows, relations, and rhs disagree")
        for rel in self.relations:
            if rel not in _REL_CODES:
                raise SolverError(f"unknown relation {rel!r}")
        if lo.size != n or hi.size != n or flags.size != n:
            raise SolverError("bound or integrality vectors disagree with objective")
        if np.any(lo > hi):
            raise SolverError("some lower bound exceeds its upper bound")
        if np.any(flags & ~(np.isfinite(lo) & np.isfinite(hi))):
            raise SolverError("integer variables must have finite bounds")
        object.__setattr__(self, "objective", obj)
        object.__setattr__(self, "constraints", a)
        object.__setattr__(self, "rhs", rhs)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "integer", flags)

    @property
    def n_vars(self) -> int:
        return self.objective.size

    @property
    def n_rows(self) -> int:
        return self.constraints.shape[0]


@dataclass
class MilpSolution:
    status: str
    values: np.ndarray | None
    objective_value: float | None
    node_count: int = 0
    dual_bound: float | None = field(default=None, repr=False)


class _Simplex:
    """Two-phase bounded-variable tableau simplex for one problem instance.

    Column layout is [structural | slack | artificial]; rows are flipped so
    the artificial start basis is nonnegative. The artificial block of the
    tableau doubles as the basis inverse for dual extraction.
    """

    def __init__(self, p: MilpProblem, lower: np.ndarray, upper: np.ndarray,
                 max_iter: int | None = None) -> None:
        m, n = p.n_rows, p.n_vars
        self.m, self.n = m, n
        rel = np.array([_REL_CODES[r] for r in p.relations], dtype=np.int64)
        slack_lo = np.where(rel == LE, 0.0, np.where(rel == GE, -np.inf, 0.0))
        slack_hi = np.where(rel == LE, np.inf, 0.0)
        self.lb = np.concatenate([lower, slack_lo, np.zeros(m)])
        self.ub = np.concatenate([upper, slack_hi, np.full(m, np.inf)])
        x0 = np.where(np.isfinite(lower), lower,
                      np.where(np.isfinite(upper), upper, 0.0))
        a_full = np.hstack([p.constraints, np.eye(m), np.eye(m)])
        b = p.rhs.copy()
        resid = b - p.constraints @ x0
        flip = resid < 0.0
        a_full[flip, : n + m] *= -1.0
        b[flip] *= -1.0
        # artificial block stays +I so it tracks the basis inverse
        self.tableau = a_full
        self.b = b
        self.x = np.concatenate([x0, np.zeros(m), np.abs(resid)])
        self.basis = np.arange(n + m, n + 2 * m)
        self.in_basis = np.zeros(n + 2 * m, dtype=bool)
        self.in_basis[self.basis] = True
        self.cost2 = np.concatenate([p.objective, np.zeros(2 * m)])
        self.max_iter = max_iter if max_iter is not None else max(
            2000, 60 * (m + n))
        self.iterations = 0

    def _run(self, cost: np.ndarray) -> str:
        m = self.m
        bland = False
        stall = 0
        stall_limit = 4 * (self.m + self.n) + 40
        last_obj = float(cost @ self.x)
        while True:
            if self.iterations >= self.max_iter:
                return STATUS_ITERATION_LIMIT
            self.iterations += 1
            d = cost - cost[self.basis] @ self.tableau
            at_lb = self.x <= self.lb + 1e-11
            at_ub = self.x >= self.ub - 1e-11
            can_inc = ~at_ub
            can_dec = ~at_lb
            eligible = ~self.in_basis & (
                ((d < -_DUAL_TOL) & can_inc) | ((d > _DUAL_TOL) & can_dec)
            )
            idx = np.nonzero(eligible)[0]
            if idx.size == 0:
                return STATUS_OPTIMAL
            if bland:
                j = int(idx[0])
            else:
                j = int(idx[np.argmax(np.abs(d[idx]))])
            direction = 1.0 if d[j] < 0.0 else -1.0
            w = self.tableau[:, j]
            denom = direction * w
            xb = self.x[self.basis]
            limits = np.full(m, np.inf)
            pos = denom > _PIVOT_TOL
            neg = denom < -_PIVOT_TOL
            lo_b = self.lb[self.basis]
            hi_b = self.ub[self.basis]
            with np.errstate(invalid="ignore"):
                limits[pos] = (xb[pos] - lo_b[pos]) / denom[pos]
                limits[neg] = (xb[neg] - hi_b[neg]) / denom[neg]
            limits = np.maximum(limits, 0.0)
            row_min = float(np.min(limits)) if m else np.inf
            span = self.ub[j] - self.lb[j]
            step = min(row_min, span)
            if not np.isfinite(step):
                return STATUS_UNBOUNDED
            if span < row_min - 1e-12:
                # entering variable flips to its opposite bound
                self.x[self.basis] = xb - direction * span * w
                self.x[j] = self.ub[j] if direction > 0 else self.lb[j]
            else:
                ties = np.nonzero(limits <= row_min + 1e-9)[0]
                dmax = np.max(np.abs(denom[ties]))
                strong = ties[np.abs(denom[ties]) >= 0.01 * dmax]
                r = int(strong[0])
                leaving = self.basis[r]
                new_vals = xb - direction * step * w
                self.x[self.basis] = new_vals
                self.x[leaving] = lo_b[r] if denom[r] > 0 else hi_b[r]
                self.x[j] = self.x[j] + direction * step
                piv = self.tableau[r, j]
                if abs(piv) < _PIVOT_TOL:
                    raise SolverError("numerically singular pivot")
                self.tableau[r] = self.tableau[r] / piv
                col = self.tableau[:, j].copy()
                col[r] = 0.0
                self.tableau -= np.outer(col, self.tableau[r])
                self.in_basis[leaving] = False
                self.in_basis[j] = True
                self.basis[r] = j
            obj = float(cost @ self.x)
            if obj < last_obj - 1e-12:
                stall = 0
            else:
                stall += 1
                if stall > stall_limit:
                    bland = True
            last_obj = obj

    def solve(self) -> MilpSolution:
        m, n = self.m, self.n
        cost1 = np.zeros(n + 2 * m)
        cost1[n + m:] = 1.0
        status = self._run(cost1)
        if status == STATUS_ITERATION_LIMIT:
            return MilpSolution(status, None, None)
        if float(cost1 @ self.x) > FEAS_TOL:
            return MilpSolution(STATUS_INFEASIBLE, None, None)
        # lock artificials at zero for phase 2
        self.lb[n + m:] = 0.0
        self.ub[n + m:] = 0.0
        art_nonbasic = ~self.in_basis[n + m:]
        self.x[n + m:][art_nonbasic] = 0.0
        status = self._run(self.cost2)
        if status != STATUS_OPTIMAL:
            return MilpSolution(status, None, None)
        values = self.x[:n].copy()
        objective = float(self.cost2[:n] @ values)
        return MilpSolution(STATUS_OPTIMAL, values, objective,
                            dual_bound=self._dual_bound())

    def _dual_bound(self) -> float | None:
        """Lagrangian bound from the final basis, for the weak-duality check."""
        m, n = self.m, self.n
        binv = self.tableau[:, n + m:]
        y = self.cost2[self.basis] @ binv
        d = self.cost2[: n + m] - self.cost2[self.basis] @ self.tableau[:, : n + m]
        bound = float(y @ self.b)
        lo = self.lb[: n + m]
        hi = self.ub[: n + m]
        for j in range(n + m):
            rc = d[j]
            if rc > _DUAL_TOL:
                if not np.isfinite(lo[j]):
                    return None
                bound += rc * lo[j]
            elif rc < -_DUAL_TOL:
                if not np.isfinite(hi[j]):
                    return None
                bound += rc * hi[j]
        return bound


def solve_lp(p: MilpProblem, lower: np.ndarray | None = None,
             upper: np.ndarray | None = None,
             max_iter: int | None = None) -> MilpSolution:
    """Solve the continuous relaxation (integrality flags ignored).

    Optional ``lower``/``upper`` override the problem bounds, which is how
    branch-and-bound tightens boxes without copying the problem.
    """
    lo = p.lower if lower is None else lower
    hi = p.upper if upper is None else upper
    if np.any(lo > hi):
        return MilpSolution(STATUS_INFEASIBLE, None, None)
    sol = _Simplex(p, lo, hi, max_iter=max_iter).solve()
    if sol.status == STATUS_OPTIMAL and sol.dual_bound is not None:
        if sol.objective_value < sol.dual_bound - 1e-6:
            raise SolverError(
                f"weak duality violated: primal {sol.objective_value} "
                f"< dual bound {sol.dual_bound}"
            )
    sol.node_count = 1
    return sol


def _fractionality(values: np.ndarray, integer: np.ndarray) -> tuple[int, float]:
    """Most fractional integer variable and its distance from the lattice."""
    frac = values - np.floor(values)
    dist = np.minimum(frac, 1.0 - frac)
    dist = np.where(integer, dist, -1.0)
    j = int(np.argmax(dist))
    return j, float(dist[j])


def _feasible(p: MilpProblem, x: np.ndarray) -> bool:
    lhs = p.constraints @ x
    for i, rel in enumerate(p.relations):
        code = _REL_CODES[rel]
        if code == LE and lhs[i] > p.rhs[i] + FEAS_TOL:
            return False
        if code == GE and lhs[i] < p.rhs[i] - FEAS_TOL:
            return False
        if code == EQ and abs(lhs[i] - p.rhs[i]) > FEAS_TOL:
            return False
    return True


def _round_heuristic(p: MilpProblem, values: np.ndarray,
                     lower: np.ndarray, upper: np.ndarray
                     ) -> tuple[float, np.ndarray] | None:
    """Try the half-up rounding of the integer part of an LP point.

    With continuous variables present, they are re-optimized with the
    integers fixed; otherwise plain feasibility is checked.
    """
    x = values.copy()
    x[p.integer] = np.floor(x[p.integer] + 0.5)
    x = np.clip(x, lower, upper)
    if np.all(p.integer):
        if _feasible(p, x):
            return float(p.objective @ x), x
        return None
    lo = lower.copy()
    hi = upper.copy()
    lo[p.integer] = x[p.integer]
    hi[p.integer] = x[p.integer]
    sub = solve_lp(p, lo, hi)
    if sub.status != STATUS_OPTIMAL:
        return None
    return sub.objective_value, sub.values


def solve_milp(p: MilpProblem, max_nodes: int = 200_000) -> MilpSolution:
    """Best-first branch-and-bound to a proven global optimum.

    Nodes are ordered by their relaxation bound; branches fix the most
    fractional integer variable (ties by lowest index) below its floor and
    above its ceiling. Exhausting the node budget returns the incumbent, if
    any, with status ``iteration_limit``.
    """
    if not np.any(p.integer):
        return solve_lp(p)
    node_count = 0
    incumbent_obj = np.inf
    incumbent_x: np.ndarray | None = None
    root = solve_lp(p)
    node_count += 1
    if root.status in (STATUS_INFEASIBLE, STATUS_UNBOUNDED):
        return MilpSolution(root.status, None, None, node_count)
    if root.status == STATUS_ITERATION_LIMIT:
        return MilpSolution(STATUS_ITERATION_LIMIT, None, None, node_count)

    def consider(obj: float, x: np.ndarray) -> None:
        nonlocal incumbent_obj, incumbent_x
        if obj < incumbent_obj - 1e-12:
            incumbent_obj = obj
            xr = x.copy()
            xr[p.integer] = np.round(xr[p.integer])
            incumbent_x = xr

    rounded = _round_heuristic(p, root.values, p.lower, p.upper)
    if rounded is not None:
        consider(*rounded)

    counter = 0
    heap: list[tuple[float, int, np.ndarray, np.ndarray, np.ndarray]] = []
    j, dist = _fractionality(root.values, p.integer)
    if dist <= INT_TOL:
        consider(root.objective_value, root.values)
        return MilpSolution(STATUS_OPTIMAL, incumbent_x, incumbent_obj, node_count)
    heapq.heappush(heap, (root.objective_value, counter, root.values,
                          p.lower.copy(), p.upper.copy()))
    out_of_budget = False
    while heap:
        bound, _, values, lo, hi = heapq.heappop(heap)
        if bound >= incumbent_obj - 1e-9:
            continue
        if node_count >= max_nodes:
            out_of_budget = True
            break
        j, _ = _fractionality(values, p.integer)
        split = np.floor(values[j])
        for side in (0, 1):
            clo, chi = lo.copy(), hi.copy()
            if side == 0:
                chi[j] = min(chi[j], split)
            else:
                clo[j] = max(clo[j], split + 1.0)
            if clo[j] > chi[j]:
                continue
            child = solve_lp(p, clo, chi)
            node_count += 1
            if child.status != STATUS_OPTIMAL:
                continue
            if child.objective_value >= incumbent_obj - 1e-9:
                continue
            cj, cdist = _fractionality(child.values, p.integer)
            if cdist <= INT_TOL:
                consider(child.objective_value, child.values)
                continue
            if node_count % 16 == 0:
                rounded = _round_heuristic(p, child.values, clo, chi)
                if rounded is not None:
                    consider(*rounded)
            counter += 1
            heapq.heappush(heap, (child.objective_value, counter,
                                  child.values, clo, chi))
    if out_of_budget:
        return MilpSolution(STATUS_ITERATION_LIMIT, incumbent_x,
                            incumbent_obj if incumbent_x is not None else None,
                            node_count)
    if incumbent_x is None:
        return MilpSolution(STATUS_INFEASIBLE, None, None, node_count)
    return MilpSolution(STATUS_OPTIMAL, incumbent_x, incumbent_obj, node_count)


def to_lp_format(p: MilpProblem, name: str = "problem") -> str:
    """Render the problem as LP-format text for external cross-checks."""

    def term(coef: float, j: int) -> str:
        sign = "+" if coef >= 0 else "-"
        return f"{sign} {abs(coef):.12g} x{j}"

    lines = [f"\\ {name}", "Minimize", " obj: " + " ".join(
        term(c, j) for j, c in enumerate(p.objective) if c != 0.0)]
    lines.append("Subject To")
    for i in range(p.n_rows):
        row = " ".join(term(c, j) for j, c in enumerate(p.constraints[i])
                       if c != 0.0) or "+ 0 x0"
        lines.append(f" c{i}: {row} {_REL_NAMES[_REL_CODES[p.relations[i]]]} "
                     f"{p.rhs[i]:.12g}")
    lines.append("Bounds")
    for j in range(p.n_vars):
        lo, hi = p.lower[j], p.upper[j]
        if not np.isfinite(lo) and not np.isfinite(hi):
            lines.append(f" x{j} free")
        elif not np.isfinite(hi):
            lines.append(f" {lo:.12g} <= x{j}")
        elif not np.isfinite(lo):
            lines.append(f" -inf <= x{j} <= {hi:.12g}")
        else:
            lines.append(f" {lo:.12g} <= x{j} <= {hi:.12g}")
    ints = [f" x{j}" for j in range(p.n_vars) if p.integer[j]]
    if ints:
        lines.append("General")
        lines.extend(ints)
    lines.append("End")
    return "\n".join(lines) + "\n"

"""Multi-step quantile forecasting strategies over pluggable learners.

Three ways to cover a horizon with quantile models: direct (one model per
step), recursive (one model iterated, feeding its own forecasts back into
the lag features), and hybrid (per-step models that consume lagged
predictions while exogenous inputs stay frozen at the forecast origin).
On top of those sit the plain ensemble (pointwise mean) and the pooled
direct-recursive ensemble, which averages direct and recursive forecasts
trained on stacked multi-series pools.

Learners see plain float matrices.  The built-in learner is a linear
pinball-loss model fitted by deterministic subgradient descent, so every
forecast in this module is reproducible bit for bit from a seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, runtime_checkable

import numpy as np
import pandas as pd

from .errors import DataError, LearnerError
from .features import (
    AR_PROVENANCES,
    PROV_CALENDAR,
    PROV_EXOGENOUS,
    FeatureConfig,
    SeriesContext,
    build_feature_matrix,
    impute_matrix,
)
from .metrics import QuantileGrid
from .panel import PanelSeries

STRATEGY_DIRECT = "direct"
STRATEGY_RECURSIVE = "recursive"
STRATEGY_HYBRID = "hybrid"

DRFAM_STRATEGIES = (STRATEGY_DIRECT, STRATEGY_RECURSIVE)

EXOG_HOLD = "hold"
EXOG_ZERO = "zero"


@runtime_checkable
class QuantileLearner(Protocol):
    """One trainable quantile model; deterministic given its seed."""

    def fit(self, features: np.ndarray, targets: np.ndarray,
            quantile: float) -> None: ...

    def predict(self, features: np.ndarray) -> np.ndarray: ...


class LinearPinballLearner:
    """Linear quantile regression via deterministic subgradient descent.

    Features and targets are standardized, weights start from a seeded
    small random draw, and the step size decays geometrically.  The
    reported coefficients average the last fifth of the iterates, which
    damps the terminal oscillation of subgradient methods.
    """

    def __init__(self, seed: int = 0, n_iter: int = 400,
                 learning_rate: float = 0.8, decay: float = 0.985) -> None:
        if n_iter < 1:
            raise LearnerError("n_iter must be at least 1")
        if learning_rate <= 0.0:
            raise LearnerError("learning rate must be positive")
        if not (0.0 < decay <= 1.0):
            raise LearnerError("decay must lie in (0, 1]")
        self.seed = int(seed)
        self.n_iter = int(n_iter)
        self.learning_rate = float(learning_rate)
        self.decay = float(decay)
        self._coef: np.ndarray | None = None
        self._intercept = 0.0
        self._x_mean: np.ndarray | None = None
        self._x_scale: np.ndarray | None = None
        self._y_mean = 0.0
        self._y_scale = 1.0

    def fit(self, features: np.ndarray, targets: np.ndarray,
            quantile: float) -> None:
        x = np.asarray(features, dtype=np.float64)
        y = np.asarray(targets, dtype=np.float64)
        if x.ndim != 2:
            raise LearnerError("feature matrix must be 2-D")
        if y.shape != (x.shape[0],):
            raise LearnerError("targets must match the feature rows")
        if x.shape[0] == 0:
            raise LearnerError("empty training set")
        if not (0.0 < quantile < 1.0):
            raise LearnerError(f"quantile {quantile!r} outside (0, 1)")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise LearnerError("non-finite training values")

        self._x_mean = x.mean(axis=0)
        scale = x.std(axis=0)
        # constant columns get unit scale so unseen values stay bounded
        self._x_scale = np.where(scale < 1e-8, 1.0, scale)
        self._y_mean = float(y.mean())
        y_scale = float(y.std())
        self._y_scale = y_scale if y_scale >= 1e-8 else 1.0

        xs = (x - self._x_mean) / self._x_scale
        ys = (y - self._y_mean) / self._y_scale

        rng = np.random.default_rng(self.seed)
        coef = rng.normal(0.0, 0.01, size=x.shape[1])
        intercept = 0.0
        tail_from = self.n_iter - max(1, self.n_iter // 5)
        coef_sum = np.zeros_like(coef)
        intercept_sum = 0.0
        tail_count = 0
        n = x.shape[0]
        for t in range(self.n_iter):
            resid = ys - (xs @ coef + intercept)
            # subgradient of mean pinball loss; flat at exact fit
            g = np.where(resid > 0.0, -quantile,
                         np.where(resid < 0.0, 1.0 - quantile, 0.0))
            step = self.learning_rate * self.decay ** t
            coef -= step * (xs.T @ g) / n
            intercept -= step * float(g.mean())
            if t >= tail_from:
                coef_sum += coef
                intercept_sum += intercept
                tail_count += 1
        self._coef = coef_sum / tail_count
        self._intercept = intercept_sum / tail_count

    def predict(self, features: np.ndarray) -> np.ndarray:
        if self._coef is None:
            raise LearnerError("predict called before fit")
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self._coef.size:
            raise LearnerError("feature matrix shape mismatch")
        if not np.all(np.isfinite(x)):
            raise LearnerError("non-finite prediction features")
        xs = (x - self._x_mean) / self._x_scale
        return self._y_mean + self._y_scale * (xs @ self._coef + self._intercept)


def builtin_learner_linear_pinball(config: dict | None = None) -> QuantileLearner:
    """Build the built-in linear learner from a plain config mapping."""
    cfg = dict(config or {})
    known = {"seed", "n_iter", "learning_rate", "decay"}
    extra = set(cfg) - known
    if extra:
        raise LearnerError(f"unknown learner options: {sorted(extra)}")
    return LinearPinballLearner(
        seed=cfg.get("seed", 0),
        n_iter=cfg.get("n_iter", 400),
        learning_rate=cfg.get("learning_rate", 0.8),
        decay=cfg.get("decay", 0.985),
    )


LEARNERS: dict[str, Callable[[dict | None], QuantileLearner]] = {
    "linear_pinball": builtin_learner_linear_pinball,
}


def register_learner(name: str,
                     factory: Callable[[dict | None], QuantileLearner]) -> None:
    """Add a learner constructor to the registry under ``name``."""
    if not name:
        raise LearnerError("learner name must be non-empty")
    LEARNERS[name] = factory


def make_learner(name: str, config: dict | None = None) -> QuantileLearner:
    if name not in LEARNERS:
        raise LearnerError(f"unknown learner {name!r}")
    return LEARNERS[name](config)


@dataclass(frozen=True)
class QuantileGridForecast:
    """Forecast values indexed by (series, step, quantile level)."""

    grid: QuantileGrid
    horizon: int
    values: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise DataError("horizon must be at least 1")
        nq = len(self.grid)
        for sid, block in self.values.items():
            if block.shape != (self.horizon, nq):
                raise DataError(
                    f"forecast block for {sid!r} has shape {block.shape}, "
                    f"expected {(self.horizon, nq)}"
                )

    def series_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.values))

    def array(self, series_id: str) -> np.ndarray:
        if series_id not in self.values:
            raise DataError(f"no forecast for series {series_id!r}")
        return self.values[series_id]

    def point_path(self, series_id: str) -> np.ndarray:
        """The median path; the grid must contain the 0.5 level."""
        levels = np.asarray(self.grid.quantiles)
        pos = int(np.argmin(np.abs(levels - 0.5)))
        if abs(levels[pos] - 0.5) > 1e-9:
            raise DataError("quantile grid has no median level")
        return self.array(series_id)[:, pos]

    def finalize(self) -> "QuantileGridForecast":
        """Clip negatives to zero, then sort each (series, step) row so the
        grid is non-crossing."""
        fixed = {
            sid: np.sort(np.maximum(block, 0.0), axis=1)
            for sid, block in self.values.items()
        }
        return QuantileGridForecast(self.grid, self.horizon, fixed)


@dataclass(frozen=True)
class PoolAssignment:
    """Pools of series ids plus a flag saying which pools are in use."""

    pools: tuple[tuple[str, tuple[str, ...]], ...]
    active: tuple[bool, ...]

    def __post_init__(self) -> None:
        if len(self.pools) != len(self.active):
            raise DataError("one active flag per pool required")
        seen = set()
        for pool_id, members in self.pools:
            if pool_id in seen:
                raise DataError(f"duplicate pool id {pool_id!r}")
            seen.add(pool_id)
            if not members:
                raise DataError(f"pool {pool_id!r} has no members")
            if len(set(members)) != len(members):
                raise DataError(f"pool {pool_id!r} repeats a member")

    def active_pools(self) -> list[tuple[str, tuple[str, ...]]]:
        return [p for p, flag in zip(self.pools, self.active) if flag]

    def pools_covering(self, series_id: str) -> list[tuple[str, tuple[str, ...]]]:
        return [p for p in self.active_pools() if series_id in p[1]]


class _SeriesFrame:
    """Per-series working state: extended calendar, padded covariates, and
    a feature-matrix builder that accepts forecast-extended targets."""

    def __init__(self, series: PanelSeries, horizon: int,
                 cfg: FeatureConfig, exog_policy: str) -> None:
        self.sid = series.series_id
        self.n_obs = series.length
        self.horizon = horizon
        self.cfg = cfg
        self.y_obs = series.target
        total = self.n_obs + horizon
        months = pd.period_range(series.timestamps[0], periods=total, freq="M")
        self.month_numbers = months.month.to_numpy()
        self.years = months.year.to_numpy()
        intro = series.intro_date
        start = series.timestamps[0]
        self.intro_index = 0 if intro is None else int(intro.ordinal - start.ordinal)
        self.covariates: dict[str, np.ndarray] = {}
        for name, vec in series.covariates.items():
            if exog_policy == EXOG_HOLD:
                pad = np.full(horizon, vec[-1] if vec.size else 0.0)
            elif exog_policy == EXOG_ZERO:
                pad = np.zeros(horizon)
            else:
                raise DataError(f"unknown exogenous policy {exog_policy!r}")
            self.covariates[name] = np.concatenate([vec, pad])

    def matrix(self, y_ext: np.ndarray) -> np.ndarray:
        """Feature values over all extended rows for the given target path."""
        ctx = SeriesContext(
            target=y_ext,
            month_numbers=self.month_numbers,
            years=self.years,
            covariates=self.covariates,
            intro_index=self.intro_index,
        )
        fm = build_feature_matrix(ctx, self.cfg)
        self.names = fm.names
        self.provenance = fm.provenance
        return fm.values

    def padded_target(self, extra: np.ndarray | None = None) -> np.ndarray:
        """Observed target padded to the extended length; ``extra`` supplies
        already-predicted steps, the rest is zero filler that no consumed
        row ever reads."""
        out = np.zeros(self.n_obs + self.horizon)
        out[: self.n_obs] = self.y_obs
        if extra is not None:
            out[self.n_obs: self.n_obs + extra.size] = extra
        return out


def _group_columns(provenance: tuple[str, ...]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    prov = np.asarray(provenance)
    ar = np.flatnonzero(np.isin(prov, AR_PROVENANCES))
    exog = np.flatnonzero(prov == PROV_EXOGENOUS)
    cal = np.flatnonzero(prov == PROV_CALENDAR)
    return ar, exog, cal


def _assemble(values: np.ndarray, provenance: tuple[str, ...],
              rows: np.ndarray, ar_shift: int, exog_shift: int) -> np.ndarray:
    """Pick feature rows with per-group lag: autoregressive and exogenous
    columns may look further back than the calendar columns of the same row."""
    ar, exog, cal = _group_columns(provenance)
    out = np.empty((rows.size, values.shape[1]))
    out[:, ar] = values[rows - ar_shift][:, ar]
    out[:, exog] = values[rows - exog_shift][:, exog]
    out[:, cal] = values[rows][:, cal]
    return out


def _shifts(strategy: str, h: int) -> tuple[int, int]:
    """(ar_shift, exog_shift) for the step-h model of each strategy."""
    if strategy == STRATEGY_DIRECT:
        return h - 1, h - 1
    if strategy == STRATEGY_RECURSIVE:
        return 0, 0
    if strategy == STRATEGY_HYBRID:
        return 0, h - 1
    raise DataError(f"unknown strategy {strategy!r}")


def _fit(learner_factory: Callable[[], QuantileLearner], x: np.ndarray,
         y: np.ndarray, q: float, h: int) -> QuantileLearner:
    learner = learner_factory()
    try:
        learner.fit(x, y, q)
    except LearnerError as exc:
        raise LearnerError(f"fit failed at step {h}, quantile {q:g}: {exc}") from exc
    return learner


class _PoolData:
    """Training blocks and per-member prediction plumbing for one pool."""

    def __init__(self, frames: list[_SeriesFrame], cfg: FeatureConfig) -> None:
        self.frames = frames
        self.cfg = cfg
        self.n_members = len(frames)
        # member identity one-hots are appended only for real pools, so a
        # singleton pool fits exactly the matrix a lone series would
        self.n_onehot = self.n_members if self.n_members > 1 else 0
        self.base = [f.matrix(f.padded_target()) for f in frames]

    def _member_rows(self, frame: _SeriesFrame, base: np.ndarray,
                     ar_shift: int, exog_shift: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        start = max(ar_shift, exog_shift)
        rows = np.arange(start, frame.n_obs)
        x = _assemble(base, frame.provenance, rows, ar_shift, exog_shift)
        x = impute_matrix(x, self.cfg.impute)
        keep = ~np.isnan(x).any(axis=1)
        return x[keep], frame.y_obs[rows[keep]], rows[keep]

    def training_block(self, strategy: str, h: int) -> tuple[np.ndarray, np.ndarray]:
        ar_shift, exog_shift = _shifts(strategy, h)
        xs, ys = [], []
        for pos, (frame, base) in enumerate(zip(self.frames, self.base)):
            x, y, _ = self._member_rows(frame, base, ar_shift, exog_shift)
            if x.shape[0] == 0:
                raise LearnerError(
                    f"series {frame.sid!r} has no usable training rows at step {h}"
                )
            if self.n_onehot:
                onehot = np.zeros((x.shape[0], self.n_onehot))
                onehot[:, pos] = 1.0
                x = np.hstack([x, onehot])
            xs.append(x)
            ys.append(y)
        return np.vstack(xs), np.concatenate(ys)

    def predict_rows(self, strategy: str, h: int,
                     paths: list[np.ndarray]) -> np.ndarray:
        """One feature row per member for forecast step h, where ``paths``
        holds each member's predictions for steps 1..h-1."""
        ar_shift, exog_shift = _shifts(strategy, h)
        rows = []
        for pos, frame in enumerate(self.frames):
            if strategy == STRATEGY_DIRECT:
                base = self.base[pos]
            else:
                base = frame.matrix(frame.padded_target(paths[pos]))
            target_row = np.array([frame.n_obs + h - 1])
            x = _assemble(base, frame.provenance, target_row, ar_shift, exog_shift)
            # impute alongside the member's history so forward fill has
            # something to fill from
            hist = _assemble(base, frame.provenance,
                             np.arange(max(ar_shift, exog_shift), frame.n_obs),
                             ar_shift, exog_shift)
            block = impute_matrix(np.vstack([hist, x]), self.cfg.impute)
            x = block[-1:]
            if np.isnan(x).any():
                raise LearnerError(
                    f"series {frame.sid!r} has missing features at step {h}"
                )
            if self.n_onehot:
                onehot = np.zeros((1, self.n_onehot))
                onehot[0, pos] = 1.0
                x = np.hstack([x, onehot])
            rows.append(x)
        return np.vstack(rows)


def _pool_forecast(strategy: str, frames: list[_SeriesFrame],
                   learner_factory: Callable[[], QuantileLearner],
                   horizon: int, grid: QuantileGrid,
                   cfg: FeatureConfig) -> dict[str, np.ndarray]:
    """Raw (unfinalized) forecast blocks for every member of one pool."""
    data = _PoolData(frames, cfg)
    nq = len(grid)
    out = {f.sid: np.empty((horizon, nq)) for f in frames}

    if strategy == STRATEGY_RECURSIVE:
        x, y = data.training_block(strategy, 1)
        for qi, q in enumerate(grid.quantiles):
            model = _fit(learner_factory, x, y, q, 1)
            paths = [np.empty(0) for _ in frames]
            for h in range(1, horizon + 1):
                pred = model.predict(data.predict_rows(strategy, h, paths))
                for pos, frame in enumerate(frames):
                    out[frame.sid][h - 1, qi] = pred[pos]
                    paths[pos] = np.append(paths[pos], max(pred[pos], 0.0))
        return out

    # per-step models, fitted before any recursion runs
    models: dict[tuple[int, int], QuantileLearner] = {}
    for h in range(1, horizon + 1):
        x, y = data.training_block(strategy, h)
        for qi, q in enumerate(grid.quantiles):
            models[h, qi] = _fit(learner_factory, x, y, q, h)

    if strategy == STRATEGY_DIRECT:
        for h in range(1, horizon + 1):
            rows = data.predict_rows(strategy, h, [np.empty(0)] * len(frames))
            for qi in range(nq):
                pred = models[h, qi].predict(rows)
                for pos, frame in enumerate(frames):
                    out[frame.sid][h - 1, qi] = pred[pos]
        return out

    if strategy == STRATEGY_HYBRID:
        for qi in range(nq):
            paths = [np.empty(0) for _ in frames]
            for h in range(1, horizon + 1):
                pred = models[h, qi].predict(data.predict_rows(strategy, h, paths))
                for pos, frame in enumerate(frames):
                    out[frame.sid][h - 1, qi] = pred[pos]
                    paths[pos] = np.append(paths[pos], max(pred[pos], 0.0))
        return out

    raise DataError(f"unknown strategy {strategy!r}")


def _check_panel(panel: list[PanelSeries], horizon: int) -> None:
    if horizon < 1:
        raise DataError("horizon must be at least 1")
    if not panel:
        raise DataError("panel is empty")
    seen = set()
    for s in panel:
        if s.series_id in seen:
            raise DataError(f"duplicate series id {s.series_id!r}")
        seen.add(s.series_id)


def _local_forecast(strategy: str, learner_factory, panel, horizon, grid,
                    feature_config, exog_policy) -> QuantileGridForecast:
    _check_panel(panel, horizon)
    cfg = feature_config if feature_config is not None else FeatureConfig()
    values: dict[str, np.ndarray] = {}
    for series in panel:
        frame = _SeriesFrame(series, horizon, cfg, exog_policy)
        block = _pool_forecast(strategy, [frame], learner_factory,
                               horizon, grid, cfg)
        values[series.series_id] = block[series.series_id]
    return QuantileGridForecast(grid, horizon, values).finalize()


def forecast_direct(learner_factory: Callable[[], QuantileLearner],
                    panel: list[PanelSeries], horizon: int,
                    grid: QuantileGrid, *,
                    feature_config: FeatureConfig | None = None,
                    exog_policy: str = EXOG_HOLD) -> QuantileGridForecast:
    """One model per forecast step; step h looks h months back, so every
    prediction uses only values observed at the forecast origin."""
    return _local_forecast(STRATEGY_DIRECT, learner_factory, panel, horizon,
                           grid, feature_config, exog_policy)


def forecast_recursive(learner_factory: Callable[[], QuantileLearner],
                       panel: list[PanelSeries], horizon: int,
                       grid: QuantileGrid, *,
                       feature_config: FeatureConfig | None = None,
                       exog_policy: str = EXOG_HOLD) -> QuantileGridForecast:
    """One model per quantile, iterated: each step's prediction is appended
    to the target history before the next step's features are built.
    Exogenous futures follow ``exog_policy`` (held at the last observed
    value by default)."""
    return _local_forecast(STRATEGY_RECURSIVE, learner_factory, panel, horizon,
                           grid, feature_config, exog_policy)


def forecast_hybrid(learner_factory: Callable[[], QuantileLearner],
                    panel: list[PanelSeries], horizon: int,
                    grid: QuantileGrid, *,
                    feature_config: FeatureConfig | None = None,
                    exog_policy: str = EXOG_HOLD) -> QuantileGridForecast:
    """Per-step models like the direct strategy, but lag features consume
    earlier steps' predictions while exogenous inputs stay frozen at the
    forecast origin."""
    return _local_forecast(STRATEGY_HYBRID, learner_factory, panel, horizon,
                           grid, feature_config, exog_policy)


def _sorted_stack_mean(blocks: list[np.ndarray]) -> np.ndarray:
    """Mean over forecast blocks, invariant to their order bit for bit:
    per-cell values are sorted along the stacking axis before summing."""
    stack = np.sort(np.stack(blocks, axis=0), axis=0)
    return stack.mean(axis=0)


def ensemble(forecasts: list[QuantileGridForecast]) -> QuantileGridForecast:
    """Pointwise mean of matching forecasts, then non-crossing finalization."""
    if not forecasts:
        raise DataError("nothing to ensemble")
    first = forecasts[0]
    ids = first.series_ids()
    for f in forecasts[1:]:
        if f.grid.quantiles != first.grid.quantiles:
            raise DataError("ensemble inputs use different quantile grids")
        if f.horizon != first.horizon:
            raise DataError("ensemble inputs use different horizons")
        if f.series_ids() != ids:
            raise DataError("ensemble inputs cover different series")
    values = {
        sid: _sorted_stack_mean([f.values[sid] for f in forecasts])
        for sid in ids
    }
    return QuantileGridForecast(first.grid, first.horizon, values).finalize()


def drfam_pp(panel: list[PanelSeries], pools: PoolAssignment,
             learner_factory: Callable[[], QuantileLearner], horizon: int,
             grid: QuantileGrid, *,
             strategies: tuple[str, ...] = DRFAM_STRATEGIES,
             feature_config: FeatureConfig | None = None,
             exog_policy: str = EXOG_HOLD) -> QuantileGridForecast:
    """Average of pool-trained direct and recursive forecasts.

    Each active pool trains one direct and one recursive model family on
    its stacked member rows (members are told apart by a one-hot identity
    column when the pool has more than one).  A series' forecast is the
    plain mean over strategies x pools-containing-it, so the divisor is
    exactly len(strategies) * len(covering pools).
    """
    _check_panel(panel, horizon)
    if not strategies:
        raise DataError("no strategies selected")
    for strategy in strategies:
        if strategy == STRATEGY_HYBRID:
            raise DataError("hybrid models are excluded from the pooled ensemble")
        _shifts(strategy, 1)
    cfg = feature_config if feature_config is not None else FeatureConfig()
    by_id = {s.series_id: s for s in panel}
    uncovered = [sid for sid in by_id if not pools.pools_covering(sid)]
    if uncovered:
        raise DataError(
            f"series not covered by any active pool: {sorted(uncovered)}"
        )

    components: dict[str, list[np.ndarray]] = {sid: [] for sid in by_id}
    for pool_id, members in pools.active_pools():
        missing = [m for m in members if m not in by_id]
        if missing:
            raise DataError(
                f"pool {pool_id!r} names series outside the panel: {missing}"
            )
        frames = [_SeriesFrame(by_id[m], horizon, cfg, exog_policy)
                  for m in members]
        for strategy in strategies:
            block = _pool_forecast(strategy, frames, learner_factory,
                                   horizon, grid, cfg)
            finalized = QuantileGridForecast(grid, horizon, block).finalize()
            for m in members:
                components[m].append(finalized.values[m])

    values = {sid: _sorted_stack_mean(blocks)
              for sid, blocks in components.items()}
    return QuantileGridForecast(grid, horizon, values).finalize()

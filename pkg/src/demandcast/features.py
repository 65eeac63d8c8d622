"""Deterministic, leakage-safe feature columns for monthly series.

Autoregressive columns (lags, rolling and exponentially weighted stats,
the age-volume and traffic-demand interactions) only ever read values at
or before t-1; calendar columns may read the month t itself. Absent values
(not enough history, product not yet introduced) are NaN here; imputation
policy is applied later, per learner.

Aggregated series take their interaction features as sums of the leaf
features, mirroring how the panel itself aggregates; parents never get an
age of their own.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DataError

SENTINEL = -1.0

PROV_LAG = "lag"
PROV_ROLLING = "rolling"
PROV_AVM = "avm"
PROV_WDI = "wdi"
PROV_CALENDAR = "calendar"
PROV_EXOGENOUS = "exogenous"

AR_PROVENANCES = (PROV_LAG, PROV_ROLLING, PROV_AVM, PROV_WDI)


@dataclass(frozen=True)
class FeatureConfig:
    """Which columns to build and how to impute them."""

    lags: tuple[int, ...] = (1, 2, 3, 6, 12)
    rolling_windows: tuple[int, ...] = (3, 6)
    rolling_stats: tuple[str, ...] = ("mean", "min", "max")
    calendar: bool = True
    calendar_onehot: bool = False
    use_avm: bool = False
    use_wdi: bool = False
    smoother_k: int = 3
    exog: tuple[str, ...] = ()
    impute: str = "sentinel"

    def __post_init__(self) -> None:
        if any(k < 1 for k in self.lags):
            raise DataError("lags must be at least 1")
        if any(w < 1 for w in self.rolling_windows):
            raise DataError("rolling windows must be at least 1")
        if self.smoother_k < 1:
            raise DataError("smoother span must be at least 1")
        if self.impute not in ("sentinel", "ffill", "drop"):
            raise DataError(f"unknown imputation policy {self.impute!r}")


@dataclass(frozen=True)
class FeatureMatrix:
    """Named feature columns for one series, one row per timestamp."""

    names: tuple[str, ...]
    provenance: tuple[str, ...]
    values: np.ndarray

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]


def lag_features(target: np.ndarray, lags: tuple[int, ...]
                 ) -> dict[str, np.ndarray]:
    """``lag_k``[t] = y[t-k]; NaN where the index runs off the start."""
    y = np.asarray(target, dtype=np.float64)
    out = {}
    for k in sorted(set(lags)):
        if k < 1:
            raise DataError("lags must be at least 1")
        col = np.full(y.size, np.nan)
        col[k:] = y[:-k] if k else y
        out[f"lag_{k:02d}"] = col
    return out


def _trailing_stat(y: np.ndarray, w: int, stat: str) -> np.ndarray:
    """Stat of y[t-w..t-1] per t; NaN until a full window exists."""
    out = np.full(y.size, np.nan)
    if stat == "ewm":
        shifted = pd.Series(y).ewm(span=w, adjust=True).mean().to_numpy()
        out[1:] = shifted[:-1]
        return out
    if y.size < w:
        return out
    windows = np.lib.stride_tricks.sliding_window_view(y, w)
    if stat == "mean":
        agg = windows.mean(axis=1)
    elif stat == "min":
        agg = windows.min(axis=1)
    elif stat == "max":
        agg = windows.max(axis=1)
    elif stat == "std":
        agg = windows.std(axis=1)
    elif stat == "sum":
        agg = windows.sum(axis=1)
    else:
        raise DataError(f"unknown rolling stat {stat!r}")
    # window ending at t-1 is windows[t-w]; the final window would peek at t
    out[w:] = agg[:-1]
    return out


def rolling_features(target: np.ndarray, windows: tuple[int, ...],
                     stats: tuple[str, ...]) -> dict[str, np.ndarray]:
    """Trailing-window stats over y[t-w..t-1], strictly excluding t."""
    y = np.asarray(target, dtype=np.float64)
    out = {}
    for w in sorted(set(windows)):
        for stat in stats:
            out[f"roll_{stat}_{w:02d}"] = _trailing_stat(y, w, stat)
    return out


def trailing_mean(values: np.ndarray, k: int) -> np.ndarray:
    """Trailing k-mean of values up to t-1; NaN until k points exist."""
    return _trailing_stat(np.asarray(values, dtype=np.float64), k, "mean")


def avm(target: np.ndarray, intro_index: int, k: int = 3) -> np.ndarray:
    """Age in months times the trailing k-mean of demand up to t-1.

    ``intro_index`` is the introduction month's offset from the series
    start (negative when introduced before the panel begins). The column
    is 0 at and before the introduction month and NaN where the smoother
    lacks history after it.
    """
    y = np.asarray(target, dtype=np.float64)
    if intro_index >= y.size:
        raise DataError("introduction lies after the panel end")
    age = np.arange(y.size, dtype=np.float64) - float(intro_index)
    smooth = trailing_mean(y, k)
    out = age * smooth
    out[age <= 0.0] = 0.0
    return out


def wdi(visits: np.ndarray, target: np.ndarray, k: int = 3) -> np.ndarray:
    """Product of trailing-smoothed visits and demand, both up to t-1."""
    v = np.asarray(visits, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if v.size != y.size:
        raise DataError("visits and target must be aligned")
    return trailing_mean(v, k) * trailing_mean(y, k)


def calendar_features(month_numbers: np.ndarray, years: np.ndarray,
                      onehot: bool = True) -> dict[str, np.ndarray]:
    """Sinusoidal month and month-of-quarter encodings, plus one-hots.

    ``month_numbers`` are calendar months 1..12 per row.
    """
    m = np.asarray(month_numbers, dtype=np.float64)
    if np.any((m < 1) | (m > 12)):
        raise DataError("month numbers must lie in 1..12")
    moq = ((m - 1) % 3) + 1
    out = {
        "month_sin": np.sin(2.0 * np.pi * m / 12.0),
        "month_cos": np.cos(2.0 * np.pi * m / 12.0),
        "moq_sin": np.sin(2.0 * np.pi * moq / 3.0),
        "moq_cos": np.cos(2.0 * np.pi * moq / 3.0),
    }
    if onehot:
        quarter = ((m - 1) // 3 + 1).astype(np.int64)
        for q in (1, 2, 3, 4):
            out[f"quarter_{q}"] = (quarter == q).astype(np.float64)
        yrs = np.asarray(years, dtype=np.int64)
        for y in np.unique(yrs):
            out[f"year_{y}"] = (yrs == y).astype(np.float64)
    return out


def difference(target: np.ndarray) -> tuple[np.ndarray, float]:
    """First differences plus the last-level anchor for inversion."""
    y = np.asarray(target, dtype=np.float64)
    if y.size < 2:
        raise DataError("differencing needs at least two points")
    d = np.full(y.size, np.nan)
    d[1:] = np.diff(y)
    return d, float(y[-1])


def undifference(anchor: float, diffs: np.ndarray) -> np.ndarray:
    """Rebuild future levels from an anchor and forecast-space diffs."""
    return anchor + np.cumsum(np.asarray(diffs, dtype=np.float64))


def impute_matrix(values: np.ndarray, policy: str) -> np.ndarray:
    """Apply the NaN policy column-wise; "drop" leaves NaN for row filtering."""
    if policy == "drop":
        return values
    out = values.copy()
    if policy == "sentinel":
        out[np.isnan(out)] = SENTINEL
        return out
    if policy == "ffill":
        for j in range(out.shape[1]):
            col = out[:, j]
            mask = np.isnan(col)
            if mask.all() or not mask.any():
                continue
            idx = np.where(~mask, np.arange(col.size), 0)
            np.maximum.accumulate(idx, out=idx)
            first_valid = np.argmin(mask)
            col[:] = col[idx]
            col[:first_valid] = np.nan
        return out
    raise DataError(f"unknown imputation policy {policy!r}")


@dataclass(frozen=True)
class SeriesContext:
    """Raw material for one series' feature matrix.

    Arrays may extend past the observed panel (recursive prediction feeds
    its own forecasts back in); calendar arrays must cover the same rows.
    """

    target: np.ndarray
    month_numbers: np.ndarray
    years: np.ndarray
    covariates: dict[str, np.ndarray] = field(default_factory=dict)
    intro_index: int = 0
    additive: dict[str, np.ndarray] = field(default_factory=dict)


def build_feature_matrix(ctx: SeriesContext, cfg: FeatureConfig) -> FeatureMatrix:
    """Assemble the configured columns for every row of the context.

    Row t mixes autoregressive values with cutoff t-1, exogenous values at
    t-1, and calendar values of t itself. ``ctx.additive`` supplies
    precomputed interaction columns for aggregated series (sums over
    leaves); when present they win over local computation.
    """
    names: list[str] = []
    prov: list[str] = []
    cols: list[np.ndarray] = []

    def add(name: str, provenance: str, col: np.ndarray) -> None:
        names.append(name)
        prov.append(provenance)
        cols.append(np.asarray(col, dtype=np.float64))

    for name, col in lag_features(ctx.target, cfg.lags).items():
        add(name, PROV_LAG, col)
    for name, col in rolling_features(ctx.target, cfg.rolling_windows,
                                      cfg.rolling_stats).items():
        add(name, PROV_ROLLING, col)
    if cfg.use_avm:
        if "avm" in ctx.additive:
            add("avm", PROV_AVM, ctx.additive["avm"])
        else:
            add("avm", PROV_AVM, avm(ctx.target, ctx.intro_index, cfg.smoother_k))
    if cfg.use_wdi:
        if "wdi" in ctx.additive:
            add("wdi", PROV_WDI, ctx.additive["wdi"])
        elif "visits" in ctx.covariates:
            add("wdi", PROV_WDI,
                wdi(ctx.covariates["visits"], ctx.target, cfg.smoother_k))
        else:
            raise DataError("wdi requested but no visits covariate present")
    for name in cfg.exog:
        if name not in ctx.covariates:
            raise DataError(f"exogenous column {name!r} not present")
        col = np.full(ctx.target.size, np.nan)
        col[1:] = ctx.covariates[name][:-1]
        add(f"exog_{name}", PROV_EXOGENOUS, col)
    if cfg.calendar:
        for name, col in calendar_features(ctx.month_numbers, ctx.years,
                                           onehot=cfg.calendar_onehot).items():
            add(name, PROV_CALENDAR, col)
    if not cols:
        raise DataError("feature configuration produces no columns")
    return FeatureMatrix(
        names=tuple(names),
        provenance=tuple(prov),
        values=np.column_stack(cols),
    )

"""Scaled point and probabilistic accuracy metrics, plus demand classification.

All scaled metrics divide by an in-sample one-step naive error. The naive
sums skip periods with zero demand, so the scale reflects movements of the
observed demand only; a scale with no surviving terms (or a zero scale) is
an explicit :class:`~demandcast.errors.MetricError`, never NaN or infinity.

Scores are averaged in two stages: over the horizon per series first, then
unweighted across the series of a level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MetricError

DEFAULT_QUANTILES = (0.005, 0.025, 0.165, 0.25, 0.5, 0.75, 0.835, 0.975, 0.995)

ADI_CUTOFF = 1.32
CV2_CUTOFF = 0.49


@dataclass(frozen=True)
class QuantileGrid:
    """Strictly increasing quantile levels in (0, 1)."""

    quantiles: tuple[float, ...] = DEFAULT_QUANTILES

    def __post_init__(self) -> None:
        q = np.asarray(self.quantiles, dtype=np.float64)
        if q.size == 0:
            raise MetricError("quantile grid is empty")
        if np.any(q <= 0.0) or np.any(q >= 1.0):
            raise MetricError("quantiles must lie strictly inside (0, 1)")
        if np.any(np.diff(q) <= 0.0):
            raise MetricError("quantiles must be strictly increasing")

    def __len__(self) -> int:
        return len(self.quantiles)


@dataclass(frozen=True)
class MetricInput:
    """History, realized values, and a forecast for one series.

    ``forecast`` is a length-H vector for point metrics; for ``spl`` it is
    the quantile path being scored, and for ``mspl`` an (H, n_quantiles)
    matrix with columns in grid order.
    """

    insample: np.ndarray
    actual: np.ndarray
    forecast: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "insample",
                           np.asarray(self.insample, dtype=np.float64))
        object.__setattr__(self, "actual",
                           np.asarray(self.actual, dtype=np.float64))
        object.__setattr__(self, "forecast",
                           np.asarray(self.forecast, dtype=np.float64))
        if self.insample.ndim != 1 or self.insample.size < 2:
            raise MetricError("insample must be a vector with T >= 2")
        if self.actual.ndim != 1 or self.actual.size < 1:
            raise MetricError("actual must be a vector with H >= 1")
        if self.forecast.shape[0] != self.actual.shape[0]:
            raise MetricError(
                f"forecast covers {self.forecast.shape[0]} steps, "
                f"actual has {self.actual.shape[0]}"
            )


def _naive_scale(insample: np.ndarray, squared: bool) -> float:
    """In-sample one-step naive error scale, skipping zero-demand periods.

    Terms are indexed by t = 2..T; a term survives iff y_t != 0.
    """
    diffs = np.diff(insample)
    keep = insample[1:] != 0.0
    if not np.any(keep):
        raise MetricError("no nonzero-demand periods in the scale denominator")
    kept = diffs[keep]
    scale = float(np.mean(kept ** 2) if squared else np.mean(np.abs(kept)))
    if scale == 0.0:
        raise MetricError("in-sample naive error scale is zero")
    return scale


def rmsse(m: MetricInput) -> float:
    """Root mean squared scaled error over the horizon."""
    if m.forecast.ndim != 1:
        raise MetricError("rmsse expects a point forecast vector")
    scale = _naive_scale(m.insample, squared=True)
    num = float(np.mean((m.actual - m.forecast) ** 2))
    return float(np.sqrt(num / scale))


def wmape(m: MetricInput) -> float:
    """Sum of absolute errors as a fraction of the summed actuals."""
    if m.forecast.ndim != 1:
        raise MetricError("wmape expects a point forecast vector")
    denom = float(np.sum(np.abs(m.actual)))
    if denom == 0.0:
        raise MetricError("wmape undefined: actuals sum to zero in absolute value")
    return float(np.sum(np.abs(m.actual - m.forecast)) / denom)


def forecast_bias(m: MetricInput) -> float:
    """Signed relative bias; positive means under-forecast."""
    if m.forecast.ndim != 1:
        raise MetricError("forecast_bias expects a point forecast vector")
    denom = float(np.sum(m.actual))
    if denom == 0.0:
        raise MetricError("forecast bias undefined: actuals sum to zero")
    return float(np.sum(m.actual - m.forecast) / denom)


def pinball_loss(actual: np.ndarray, forecast: np.ndarray, q: float) -> np.ndarray:
    """Elementwise pinball (quantile) loss at level q."""
    diff = np.asarray(actual, dtype=np.float64) - np.asarray(forecast, dtype=np.float64)
    return np.where(diff >= 0.0, q * diff, (q - 1.0) * diff)


def spl(m: MetricInput, q: float) -> float:
    """Scaled pinball loss at one quantile level.

    ``m.forecast`` is the quantile-q path. The horizon-mean pinball loss is
    divided by the in-sample mean absolute one-step naive error.
    """
    if not 0.0 < q < 1.0:
        raise MetricError(f"quantile level {q} outside (0, 1)")
    if m.forecast.ndim != 1:
        raise MetricError("spl expects the single quantile path being scored")
    scale = _naive_scale(m.insample, squared=False)
    return float(np.mean(pinball_loss(m.actual, m.forecast, q)) / scale)


def mspl(m: MetricInput, grid: QuantileGrid) -> float:
    """Unweighted mean of spl over the grid.

    ``m.forecast`` must be an (H, len(grid)) matrix in grid column order.
    """
    if m.forecast.ndim != 2 or m.forecast.shape[1] != len(grid):
        raise MetricError(
            f"mspl expects an (H, {len(grid)}) forecast matrix, "
            f"got shape {m.forecast.shape}"
        )
    scores = [
        spl(MetricInput(m.insample, m.actual, m.forecast[:, j]), q)
        for j, q in enumerate(grid.quantiles)
    ]
    return float(np.mean(scores))


def classify_demand(insample: np.ndarray) -> str:
    """Classify a series as smooth, intermittent, erratic, or lumpy.

    ADI is the mean inter-demand interval, CV^2 the squared coefficient of
    variation of the nonzero demand sizes. Values at a cutoff classify
    downward (<= cutoff counts as low).
    """
    y = np.asarray(insample, dtype=np.float64)
    if y.ndim != 1 or y.size < 4:
        raise MetricError("classification needs a series of length >= 4")
    nonzero = y[y != 0.0]
    if nonzero.size == 0:
        raise MetricError("cannot classify an all-zero series")
    adi = y.size / nonzero.size
    mean = float(np.mean(nonzero))
    cv2 = float(np.var(nonzero) / mean ** 2)
    low_adi = adi <= ADI_CUTOFF
    low_cv2 = cv2 <= CV2_CUTOFF
    if low_adi:
        return "smooth" if low_cv2 else "erratic"
    return "intermittent" if low_cv2 else "lumpy"


def two_stage_average(per_series_scores: dict[str, float],
                      level_map: dict[str, int | str]) -> dict[int | str, float]:
    """Unweighted per-level mean of per-series scores.

    Every scored series must be mapped to a level; the result has one entry
    per level that appears.
    """
    if not per_series_scores:
        raise MetricError("no per-series scores to average")
    groups: dict[int | str, list[float]] = {}
    for sid, score in per_series_scores.items():
        if sid not in level_map:
            raise MetricError(f"series {sid!r} has no level mapping")
        groups.setdefault(level_map[sid], []).append(score)
    return {lvl: float(np.mean(vals)) for lvl, vals in groups.items()}

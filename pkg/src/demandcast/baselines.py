"""Statistical benchmark forecasters with empirical quantile bands.

Four point methods: naive (repeat last), seasonal naive (repeat the value
one season back, walking forward through the season), trailing moving
average, and simple exponential smoothing seeded with the first
observation. None of the source material for these prescribes how the
benchmarks should produce quantiles, so bands are built from empirical
h-step in-sample residuals around the point path, clipped at zero and
sorted across the grid; that construction is a documented choice of this
package, not a claim about any reference setup.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .metrics import QuantileGrid

MIN_RESIDUALS = 8

KINDS = ("naive", "snaive", "ma", "ses")


@dataclass(frozen=True)
class BaselineConfig:
    kind: str
    window: int | None = None
    alpha: float | None = None
    season_length: int = 12

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise DataError(f"unknown baseline kind {self.kind!r}")
        if (self.kind == "ma") != (self.window is not None):
            raise DataError("window must be given exactly for kind 'ma'")
        if (self.kind == "ses") != (self.alpha is not None):
            raise DataError("alpha must be given exactly for kind 'ses'")
        if self.window is not None and self.window < 1:
            raise DataError("window must be positive")
        if self.alpha is not None and not 0.0 < self.alpha <= 1.0:
            raise DataError("alpha must lie in (0, 1]")
        if self.season_length < 1:
            raise DataError("season length must be positive")

    def min_history(self) -> int:
        if self.kind == "snaive":
            return self.season_length
        if self.kind == "ma":
            return int(self.window)
        return 1


def forecast_point(cfg: BaselineConfig, insample: np.ndarray,
                   horizon: int) -> np.ndarray:
    """Point forecast of the configured benchmark over the horizon."""
    y = np.asarray(insample, dtype=np.float64)
    if horizon < 1:
        raise DataError("horizon must be at least 1")
    if y.size < cfg.min_history():
        raise DataError(
            f"{cfg.kind} needs at least {cfg.min_history()} observations, "
            f"got {y.size}"
        )
    if cfg.kind == "naive":
        return np.repeat(y[-1], horizon)
    if cfg.kind == "snaive":
        m = cfg.season_length
        idx = [y.size - m + ((h - 1) % m) for h in range(1, horizon + 1)]
        return y[idx].astype(np.float64)
    if cfg.kind == "ma":
        return np.repeat(float(np.mean(y[-cfg.window:])), horizon)
    level = y[0]
    for value in y[1:]:
        level = cfg.alpha * value + (1.0 - cfg.alpha) * level
    return np.repeat(float(level), horizon)


def _h_step_residuals(cfg: BaselineConfig, y: np.ndarray,
                      horizon: int) -> list[np.ndarray]:
    """In-sample h-step residuals (actual minus forecast) per horizon step."""
    start = cfg.min_history()
    residuals: list[list[float]] = [[] for _ in range(horizon)]
    for origin in range(start, y.size):
        steps = min(horizon, y.size - origin)
        path = forecast_point(cfg, y[:origin], steps)
        for h in range(steps):
            residuals[h].append(float(y[origin + h] - path[h]))
    return [np.asarray(r, dtype=np.float64) for r in residuals]


def forecast_quantiles(cfg: BaselineConfig, insample: np.ndarray,
                       horizon: int, grid: QuantileGrid) -> np.ndarray:
    """Quantile bands around the point path from h-step residual quantiles.

    Returns an (H, len(grid)) matrix, clipped at zero and sorted across
    the grid so paths cannot cross.
    """
    y = np.asarray(insample, dtype=np.float64)
    point = forecast_point(cfg, y, horizon)
    residuals = _h_step_residuals(cfg, y, horizon)
    bands = np.empty((horizon, len(grid)))
    for h in range(horizon):
        r = residuals[h]
        if r.size < MIN_RESIDUALS:
            raise DataError(
                f"step {h + 1} has {r.size} residuals, needs {MIN_RESIDUALS}"
            )
        qs = np.quantile(r, np.asarray(grid.quantiles))
        bands[h] = point[h] + qs
    bands = np.clip(bands, 0.0, None)
    bands.sort(axis=1)
    return bands

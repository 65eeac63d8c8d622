"""Pipeline configuration: one TOML file drives every subcommand.

Every key has a default mirroring the toolkit's standard settings (6-month
horizon, 9-level quantile grid, 3-month smoother, season length 12,
smoothing alpha 0.4), so an empty or absent config file is valid.
Unknown sections or keys are rejected rather than ignored.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import tomli

from .baselines import BaselineConfig
from .errors import DataError
from .features import FeatureConfig
from .metrics import DEFAULT_QUANTILES, QuantileGrid
from .panel import SyntheticConfig

STRATEGY_CHOICES = ("direct", "recursive", "hybrid", "ensemble", "drfam",
                    "naive", "snaive", "ma", "ses")
BASELINE_KINDS = ("naive", "snaive", "ma", "ses")
RECONCILE_METHODS = ("bu", "bu_round", "ols", "mint", "mint_round",
                     "milp", "milp_lw")
METRIC_CHOICES = ("rmsse", "wmape", "mspl")
ALTERNATIVES = ("two_sided", "less", "greater")

DEFAULT_LAMBDA_GRID = (0.0, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0)


@dataclass(frozen=True)
class PipelineConfig:
    """Validated settings for the batch pipeline."""

    data_path: str | None = None
    key_columns: tuple[str, ...] = ("market", "product_type")
    intro_column: str | None = "intro"
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)

    horizon: int = 6
    windows: int = 3
    strategy: str = "recursive"
    quantiles: tuple[float, ...] = DEFAULT_QUANTILES
    exog_policy: str = "hold"
    pools_file: str | None = None

    learner: str = "linear_pinball"
    learner_params: dict = field(default_factory=dict)
    features: FeatureConfig = field(default_factory=FeatureConfig)

    baseline_window: int = 3
    baseline_alpha: float = 0.4
    season_length: int = 12

    pool_families: tuple[tuple[str, ...], ...] = (("market",),)
    pool_lambda: float | None = None
    pool_lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    pool_s: float | None = None
    pool_nu: float = 1.0
    pool_strategies: tuple[str, ...] = ("direct", "recursive")

    methods: tuple[str, ...] = RECONCILE_METHODS
    shrink_lambda: float = 0.3
    bottom_weight: float = 0.5

    metric: str = "rmsse"
    alternative: str = "two_sided"

    output_dir: str = "out"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise DataError("horizon must be at least 1")
        if self.windows < 1:
            raise DataError("need at least one evaluation window")
        if self.strategy not in STRATEGY_CHOICES:
            raise DataError(
                f"unknown strategy {self.strategy!r}; "
                f"choose one of {STRATEGY_CHOICES}"
            )
        QuantileGrid(self.quantiles)
        for m in self.methods:
            if m not in RECONCILE_METHODS:
                raise DataError(
                    f"unknown reconciliation method {m!r}; "
                    f"choose from {RECONCILE_METHODS}"
                )
        if not self.methods:
            raise DataError("reconciliation method list is empty")
        if self.metric not in METRIC_CHOICES:
            raise DataError(f"unknown metric {self.metric!r}")
        if self.alternative not in ALTERNATIVES:
            raise DataError(f"unknown alternative {self.alternative!r}")
        if not (0.0 <= self.shrink_lambda <= 1.0):
            raise DataError("shrink lambda must lie in [0, 1]")
        if not (0.0 <= self.bottom_weight <= 1.0):
            raise DataError("bottom weight must lie in [0, 1]")
        if self.pool_lambda is not None and self.pool_lambda < 0.0:
            raise DataError("pooling lambda must be nonnegative")
        if not self.pool_lambda_grid:
            raise DataError("pooling lambda grid is empty")
        for fam in self.pool_families:
            bad = [c for c in fam if c not in self.key_columns]
            if bad:
                raise DataError(
                    f"pool family {fam!r} names unknown key columns {bad}"
                )
        for strat in self.pool_strategies:
            if strat not in ("direct", "recursive"):
                raise DataError(
                    f"pooling strategy {strat!r} must be direct or recursive"
                )

    def grid(self) -> QuantileGrid:
        return QuantileGrid(self.quantiles)

    def baseline_config(self, kind: str) -> BaselineConfig:
        if kind == "ma":
            return BaselineConfig("ma", window=self.baseline_window,
                                  season_length=self.season_length)
        if kind == "ses":
            return BaselineConfig("ses", alpha=self.baseline_alpha,
                                  season_length=self.season_length)
        return BaselineConfig(kind, season_length=self.season_length)


def _take(section: dict, known: dict, where: str) -> dict:
    extra = set(section) - set(known)
    if extra:
        raise DataError(f"unknown keys in [{where}]: {sorted(extra)}")
    out = {}
    for key, conv in known.items():
        if key in section:
            out[key] = conv(section[key])
    return out


def _tuple_of(conv):
    return lambda v: tuple(conv(x) for x in v)


def load_config(path: str | None = None) -> PipelineConfig:
    """Build a PipelineConfig from a TOML file; None means all defaults."""
    if path is None:
        return PipelineConfig()
    if not os.path.exists(path):
        raise DataError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise DataError(f"config file {path} is not valid TOML: {exc}") from exc

    known_sections = {"data", "synthetic", "forecast", "learner", "features",
                      "baseline", "pooling", "reconcile", "evaluate", "output"}
    top_extra = set(raw) - known_sections - {"seed"}
    if top_extra:
        raise DataError(f"unknown config sections: {sorted(top_extra)}")

    kwargs: dict = {}
    if "seed" in raw:
        kwargs["seed"] = int(raw["seed"])

    data = _take(raw.get("data", {}), {
        "path": str, "key_columns": _tuple_of(str), "intro_column": str,
    }, "data")
    if "path" in data:
        kwargs["data_path"] = data["path"]
    if "key_columns" in data:
        kwargs["key_columns"] = data["key_columns"]
    if "intro_column" in data:
        kwargs["intro_column"] = data["intro_column"]

    syn = _take(raw.get("synthetic", {}), {
        "markets": int, "product_types": int, "months": int, "seed": int,
        "start": str, "base_rate": float, "noise_scale": float, "visits": bool,
    }, "synthetic")
    syn_kwargs: dict = {}
    counts = {}
    if "markets" in syn:
        counts["market"] = syn["markets"]
    if "product_types" in syn:
        counts["product_type"] = syn["product_types"]
    if counts:
        base = {"market": 23, "product_type": 20}
        base.update(counts)
        syn_kwargs["level_counts"] = base
    for src, dst in (("months", "n_months"), ("seed", "seed"),
                     ("start", "start"), ("base_rate", "base_rate"),
                     ("noise_scale", "noise_scale"),
                     ("visits", "visits_covariate")):
        if src in syn:
            syn_kwargs[dst] = syn[src]
    if "seed" in kwargs and "seed" not in syn_kwargs:
        syn_kwargs["seed"] = kwargs["seed"]
    kwargs["synthetic"] = SyntheticConfig(**syn_kwargs)

    fc = _take(raw.get("forecast", {}), {
        "horizon": int, "windows": int, "strategy": str,
        "quantiles": _tuple_of(float), "exog_policy": str, "pools_file": str,
    }, "forecast")
    kwargs.update(fc)

    lrn = _take(raw.get("learner", {}), {
        "name": str, "seed": int, "n_iter": int, "learning_rate": float,
        "decay": float,
    }, "learner")
    if "name" in lrn:
        kwargs["learner"] = lrn.pop("name")
    if "seed" in kwargs and "seed" not in lrn:
        lrn["seed"] = kwargs["seed"]
    if lrn:
        kwargs["learner_params"] = lrn

    feat = _take(raw.get("features", {}), {
        "lags": _tuple_of(int), "rolling_windows": _tuple_of(int),
        "rolling_stats": _tuple_of(str), "calendar": bool,
        "calendar_onehot": bool, "use_avm": bool, "use_wdi": bool,
        "smoother_k": int, "exog": _tuple_of(str), "impute": str,
    }, "features")
    if feat:
        kwargs["features"] = FeatureConfig(**feat)

    base_sec = _take(raw.get("baseline", {}), {
        "window": int, "alpha": float, "season_length": int,
    }, "baseline")
    if "window" in base_sec:
        kwargs["baseline_window"] = base_sec["window"]
    if "alpha" in base_sec:
        kwargs["baseline_alpha"] = base_sec["alpha"]
    if "season_length" in base_sec:
        kwargs["season_length"] = base_sec["season_length"]

    pool = _take(raw.get("pooling", {}), {
        "families": lambda v: tuple(tuple(str(c) for c in fam) for fam in v),
        "lambda": float, "lambda_grid": _tuple_of(float), "s": float,
        "nu": float, "strategies": _tuple_of(str),
    }, "pooling")
    rename = {"families": "pool_families", "lambda": "pool_lambda",
              "lambda_grid": "pool_lambda_grid", "s": "pool_s",
              "nu": "pool_nu", "strategies": "pool_strategies"}
    kwargs.update({rename[k]: v for k, v in pool.items()})

    rec = _take(raw.get("reconcile", {}), {
        "methods": _tuple_of(str), "shrink_lambda": float,
        "bottom_weight": float,
    }, "reconcile")
    kwargs.update(rec)

    ev = _take(raw.get("evaluate", {}), {
        "metric": str, "alternative": str,
    }, "evaluate")
    kwargs.update(ev)

    out = _take(raw.get("output", {}), {"directory": str}, "output")
    if "directory" in out:
        kwargs["output_dir"] = out["directory"]

    return PipelineConfig(**kwargs)

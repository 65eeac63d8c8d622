"""Batch pipeline driver.

Subcommands: simulate | forecast | pool-select | reconcile | evaluate |
geometry-demo.  Exit codes: 0 success, 1 usage error, 2 data error,
3 solver or learner failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np
import pandas as pd

from . import baselines, report
from .config import PipelineConfig, load_config
from .errors import DataError, LearnerError, MetricError, SolverError
from .hierarchy import (HierarchySpec, SummingMatrix, build_summing_matrix,
                        spec_from_key_paths)
from .metrics import MetricInput, QuantileGrid, mspl, rmsse, wmape
from .evalstats import hodges_lehmann, wilcoxon_signed_rank
from .panel import (PanelSchema, PanelSeries, SplitPlan, generate_synthetic,
                    load_panel, rolling_windows, save_panel, slice_series)
from .pooling import (build_candidate, build_loss_table, calibrate_s,
                      frontier_elbow, lambda_frontier, selection_to_pools,
                      singleton_candidates, solve_pool_selection)
from .reconcile import (CovarianceSpec, ReconWeights, alpha_from_bottom_weight,
                        estimate_covariance, gamma_from_validation,
                        reconcile_bu, reconcile_milp, reconcile_mint,
                        reconcile_ols, round_posthoc)
from .strategies import (PoolAssignment, QuantileGridForecast, drfam_pp,
                         ensemble, forecast_direct, forecast_hybrid,
                         forecast_recursive, make_learner)


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "out", None):
        cfg = dataclasses.replace(cfg, output_dir=args.out)
    if getattr(args, "strategy", None):
        cfg = dataclasses.replace(cfg, strategy=args.strategy)
    return cfg


def _load_or_generate(cfg: PipelineConfig
                      ) -> tuple[list[PanelSeries], HierarchySpec]:
    """All panel series (aggregates included) plus the hierarchy spec."""
    if cfg.data_path is not None:
        schema = PanelSchema(key_columns=cfg.key_columns,
                             intro_column=cfg.intro_column)
        return load_panel(cfg.data_path, schema)
    return generate_synthetic(cfg.synthetic)


def _learner_factory(cfg: PipelineConfig):
    return lambda: make_learner(cfg.learner, dict(cfg.learner_params))


def _baseline_forecast(cfg: PipelineConfig, kind: str,
                       panel: list[PanelSeries], horizon: int,
                       grid: QuantileGrid) -> QuantileGridForecast:
    bcfg = cfg.baseline_config(kind)
    values = {
        s.series_id: baselines.forecast_quantiles(bcfg, s.target, horizon, grid)
        for s in panel
    }
    return QuantileGridForecast(grid, horizon, values).finalize()


def _load_pools(path: str) -> PoolAssignment:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"pools file {path!r} does not exist") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"pools file {path!r} is not valid JSON") from exc
    try:
        pools = tuple((p["id"], tuple(p["members"])) for p in payload["pools"])
        active = tuple(bool(a) for a in payload["active"])
    except (KeyError, TypeError) as exc:
        raise DataError(f"pools file {path!r} has an unexpected shape") from exc
    return PoolAssignment(pools, active)


def _save_pools(path: str, assignment: PoolAssignment) -> None:
    payload = {
        "pools": [{"id": pid, "members": list(members)}
                  for pid, members in assignment.pools],
        "active": list(assignment.active),
    }
    report.ensure_dir(os.path.dirname(path) or ".")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _with_singleton_fallback(pools: PoolAssignment,
                             panel: list[PanelSeries]) -> PoolAssignment:
    """Extend an assignment so every panel series is covered; series the
    file does not mention train alone."""
    covered = {m for _, members in pools.pools for m in members}
    extra = [(f"single/{s.series_id}", (s.series_id,))
             for s in panel if s.series_id not in covered]
    return PoolAssignment(pools.pools + tuple(extra),
                          pools.active + tuple(True for _ in extra))


def _strategy_forecast(cfg: PipelineConfig, strategy: str,
                       panel: list[PanelSeries], horizon: int,
                       grid: QuantileGrid,
                       pools: PoolAssignment | None) -> QuantileGridForecast:
    factory = _learner_factory(cfg)
    kw = dict(feature_config=cfg.features, exog_policy=cfg.exog_policy)
    if strategy == "direct":
        return forecast_direct(factory, panel, horizon, grid, **kw)
    if strategy == "recursive":
        return forecast_recursive(factory, panel, horizon, grid, **kw)
    if strategy == "hybrid":
        return forecast_hybrid(factory, panel, horizon, grid, **kw)
    if strategy == "ensemble":
        parts = [
            forecast_direct(factory, panel, horizon, grid, **kw),
            forecast_recursive(factory, panel, horizon, grid, **kw),
            forecast_hybrid(factory, panel, horizon, grid, **kw),
        ]
        return ensemble(parts)
    if strategy == "drfam":
        if pools is None:
            raise DataError(
                "strategy 'drfam' needs a pools file (--pools or [forecast] "
                "pools_file); run pool-select first"
            )
        full = _with_singleton_fallback(pools, panel)
        return drfam_pp(panel, full, factory, horizon, grid,
                        strategies=cfg.pool_strategies, **kw)
    if strategy in baselines.KINDS:
        return _baseline_forecast(cfg, strategy, panel, horizon, grid)
    raise DataError(f"unknown strategy {strategy!r}")


def _forecast_frame(fc: QuantileGridForecast, window: int,
                    months: list[str]) -> pd.DataFrame:
    rows = []
    for sid in fc.series_ids():
        block = fc.array(sid)
        for h in range(fc.horizon):
            row = {"series_id": sid, "window": window, "step": h + 1,
                   "month": months[h]}
            for j, q in enumerate(fc.grid.quantiles):
                row[f"q_{q:g}"] = block[h, j]
            rows.append(row)
    return pd.DataFrame(rows)


def _level_name(spec: HierarchySpec, level: int) -> str:
    return spec.levels[level]


def _score_series(metric: str, insample: np.ndarray, actual: np.ndarray,
                  fc: QuantileGridForecast, sid: str) -> float:
    """One series' held-out score; NaN when the metric is undefined."""
    try:
        if metric == "mspl":
            m = MetricInput(insample, actual, fc.array(sid))
            return mspl(m, fc.grid)
        m = MetricInput(insample, actual, fc.point_path(sid))
        return rmsse(m) if metric == "rmsse" else wmape(m)
    except MetricError:
        return float("nan")


def _metric_rows(cfg: PipelineConfig, spec: HierarchySpec,
                 panel: list[PanelSeries], fc: QuantileGridForecast,
                 window: int, train_stop: int, test_rng: range) -> list[dict]:
    by_node = spec.node_by_id()
    scores: dict[str, float] = {}
    for s in panel:
        scores[s.series_id] = _score_series(
            cfg.metric, s.target[:train_stop], s.target[test_rng],
            fc, s.series_id)
    rows = []
    levels = sorted({n.level for n in spec.nodes})
    for lv in levels:
        vals = [scores[s.series_id] for s in panel
                if by_node[s.series_id].level == lv]
        clean = [v for v in vals if not np.isnan(v)]
        rows.append({
            "window": window,
            "level": _level_name(spec, lv),
            "metric": cfg.metric,
            "value": float(np.mean(clean)) if clean else float("nan"),
            "n_series": len(clean),
            "n_skipped": len(vals) - len(clean),
        })
    return rows


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    series, spec = _load_or_generate(cfg)
    out = report.ensure_dir(cfg.output_dir)
    schema = PanelSchema(key_columns=tuple(spec.levels[1:]),
                         intro_column=cfg.intro_column)
    bottoms = [s for s in series if s.key_path]
    panel_path = os.path.join(out, "panel.csv")
    save_panel(bottoms, panel_path, schema)
    with open(os.path.join(out, "hierarchy.json"), "w", encoding="utf-8") as fh:
        fh.write(spec.to_json())
        fh.write("\n")
    by_level: dict[str, int] = {}
    for n in spec.nodes:
        name = _level_name(spec, n.level)
        by_level[name] = by_level.get(name, 0) + 1
    frame = pd.DataFrame(
        [{"level": k, "series": v} for k, v in by_level.items()])
    print(report.console_table(frame, title="panel summary"))
    print(f"months: {len(series[0].timestamps)}  "
          f"({series[0].timestamps[0]} to {series[0].timestamps[-1]})")
    print(f"wrote {panel_path}")
    return 0


def cmd_forecast(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    series, spec = _load_or_generate(cfg)
    grid = cfg.grid()
    pools = None
    pools_path = getattr(args, "pools", None) or cfg.pools_file
    if pools_path:
        pools = _load_pools(pools_path)
    plan = SplitPlan(horizon=cfg.horizon, n_windows=cfg.windows)
    windows = rolling_windows(plan, series[0].length)
    out = report.ensure_dir(cfg.output_dir)
    all_metrics: list[dict] = []
    first_fc: QuantileGridForecast | None = None
    first_train_stop = 0
    for w, (train_rng, test_rng) in enumerate(windows, start=1):
        train_stop = train_rng.stop
        sliced = [slice_series(s, train_stop) for s in series]
        fc = _strategy_forecast(cfg, cfg.strategy, sliced, cfg.horizon, grid,
                                pools)
        months = [str(series[0].timestamps[t]) for t in test_rng]
        frame = _forecast_frame(fc, w, months)
        path = os.path.join(out, f"forecast_{cfg.strategy}_w{w}.csv")
        report.write_csv(path, frame)
        all_metrics.extend(
            _metric_rows(cfg, spec, series, fc, w, train_stop, test_rng))
        print(f"window {w}: wrote {path}")
        if first_fc is None:
            first_fc, first_train_stop = fc, train_stop
    metric_frame = pd.DataFrame(all_metrics)
    report.write_csv(os.path.join(out, f"metrics_{cfg.strategy}.csv"),
                     metric_frame)
    print(report.console_table(metric_frame,
                               title=f"{cfg.metric} by level ({cfg.strategy})"))
    top = series[0]
    hist_from = max(0, first_train_stop - 36)
    hist_months = [str(m) for m in top.timestamps[hist_from:first_train_stop]]
    fc_months = [str(m) for m in
                 top.timestamps[first_train_stop:first_train_stop + cfg.horizon]]
    fig_path = os.path.join(out, f"fan_{cfg.strategy}.png")
    report.fan_chart(fig_path, top.series_id, hist_months,
                     top.target[hist_from:first_train_stop], fc_months,
                     first_fc.array(top.series_id), grid.quantiles)
    print(f"wrote {fig_path}")
    return 0


def _read_forecast_file(path: str) -> tuple[pd.DataFrame, list[float], int]:
    """Forecast frame, its quantile levels, and its single window index."""
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError as exc:
        raise DataError(f"forecast file {path!r} does not exist") from exc
    needed = {"series_id", "window", "step", "month"}
    if not needed <= set(frame.columns):
        raise DataError(
            f"{path!r} lacks columns {sorted(needed - set(frame.columns))}")
    qcols = [c for c in frame.columns if c.startswith("q_")]
    if not qcols:
        raise DataError(f"{path!r} has no quantile columns")
    try:
        levels = [float(c[2:]) for c in qcols]
    except ValueError as exc:
        raise DataError(f"{path!r} has malformed quantile headers") from exc
    wins = sorted(frame["window"].unique())
    if len(wins) != 1:
        raise DataError(
            f"{path!r} holds windows {wins}; reconcile one window at a time")
    return frame, levels, int(wins[0])


def _median_paths(frame: pd.DataFrame, levels: list[float]
                  ) -> tuple[dict[str, np.ndarray], list[str]]:
    """Per-series central path (quantile level closest to 0.5) and the
    forecast months, validated to agree across series."""
    qcols = [c for c in frame.columns if c.startswith("q_")]
    mid = qcols[int(np.argmin([abs(l - 0.5) for l in levels]))]
    paths: dict[str, np.ndarray] = {}
    months: list[str] | None = None
    for sid, group in frame.groupby("series_id", sort=True):
        group = group.sort_values("step")
        steps = group["step"].to_numpy()
        if not np.array_equal(steps, np.arange(1, len(steps) + 1)):
            raise DataError(f"series {sid!r}: steps are not 1..H")
        these = [str(m) for m in group["month"]]
        if months is None:
            months = these
        elif these != months:
            raise DataError(f"series {sid!r}: months disagree with the rest")
        paths[str(sid)] = group[mid].to_numpy(dtype=np.float64)
    assert months is not None
    return paths, months


def _base_matrix(paths: dict[str, np.ndarray], s: SummingMatrix) -> np.ndarray:
    missing = [rid for rid in s.row_ids if rid not in paths]
    if missing:
        raise DataError(
            f"forecast file lacks {len(missing)} hierarchy series, "
            f"first {missing[0]!r}")
    return np.stack([paths[rid] for rid in s.row_ids])


def _naive_gamma(series_by_id: dict[str, PanelSeries], s: SummingMatrix,
                 origin: int, horizon: int) -> np.ndarray:
    """Reliability weights from a one-window naive validation WMAPE.

    The last ``horizon`` pre-origin months are scored against a flat
    continuation of the month before them. Series without a defined WMAPE
    get the worst defined one (least reliable).
    """
    raw = np.full(len(s.row_ids), np.nan)
    for i, rid in enumerate(s.row_ids):
        y = series_by_id[rid].target[:origin]
        if y.size < horizon + 1:
            continue
        held = y[-horizon:]
        denom = float(np.sum(np.abs(held)))
        if denom == 0.0:
            continue
        raw[i] = float(np.sum(np.abs(held - y[-horizon - 1])) / denom)
    fallback = float(np.nanmax(raw)) if np.any(~np.isnan(raw)) else 1.0
    raw = np.where(np.isnan(raw), max(fallback, 1.0), raw)
    return gamma_from_validation(raw)


def _naive_covariance(series_by_id: dict[str, PanelSeries], s: SummingMatrix,
                      origin: int, shrink_lambda: float) -> CovarianceSpec:
    """Base-error covariance proxied by one-step naive residuals in train."""
    cols = []
    for rid in s.row_ids:
        y = series_by_id[rid].target[:origin]
        if y.size < 2:
            raise DataError(f"series {rid!r}: not enough history before the "
                            "forecast origin")
        cols.append(np.diff(y))
    return estimate_covariance(np.stack(cols, axis=1), shrink_lambda)


def _coherence_columns(s: SummingMatrix, values: np.ndarray,
                       tol: float = 1e-7) -> tuple[int, float]:
    resid = values - s.entries @ values[s.bottom_row_positions()]
    per_col = np.max(np.abs(resid), axis=0)
    return int(np.sum(per_col > tol)), float(per_col.max())


def cmd_reconcile(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    series, spec = _load_or_generate(cfg)
    s = build_summing_matrix(spec)
    frame, levels, window = _read_forecast_file(args.forecast)
    paths, months = _median_paths(frame, levels)
    base = _base_matrix(paths, s)
    by_id = {ps.series_id: ps for ps in series}
    try:
        origin = series[0].timestamps.get_loc(pd.Period(months[0], freq="M"))
    except KeyError as exc:
        raise DataError(
            f"forecast month {months[0]} is outside the panel") from exc
    horizon = base.shape[1]
    gamma = _naive_gamma(by_id, s, origin, horizon)
    cov = _naive_covariance(by_id, s, origin, cfg.shrink_lambda)
    n_levels = len(spec.levels)
    alpha = (alpha_from_bottom_weight(n_levels, cfg.bottom_weight)
             if n_levels >= 2 else None)
    weights = ReconWeights(gamma=gamma, alpha=alpha)

    out = report.ensure_dir(cfg.output_dir)
    rows = []
    for method in cfg.methods:
        t0 = time.perf_counter()
        objective = float("nan")
        if method == "bu":
            values = reconcile_bu(base, s)
        elif method == "bu_round":
            values, _ = round_posthoc(reconcile_bu(base, s), s)
        elif method == "ols":
            values = reconcile_ols(base, s)
        elif method == "mint":
            values = reconcile_mint(base, s, cov)
        elif method == "mint_round":
            values, _ = round_posthoc(reconcile_mint(base, s, cov), s)
        elif method in ("milp", "milp_lw"):
            result = reconcile_milp(base, s, weights,
                                    level_weighted=method == "milp_lw")
            values, objective = result.values, result.objective
        else:
            raise DataError(f"unknown reconciliation method {method!r}")
        elapsed = time.perf_counter() - t0
        frame_out = pd.DataFrame([
            {"series_id": rid, "window": window, "step": h + 1,
             "month": months[h], "value": values[i, h]}
            for i, rid in enumerate(s.row_ids) for h in range(horizon)
        ])
        path = os.path.join(out, f"reconciled_{method}.csv")
        report.write_csv(path, frame_out)
        bad_cols, max_violation = _coherence_columns(s, values)
        rows.append({
            "method": method,
            "periods_violated": bad_cols,
            "max_violation": max_violation,
            "all_integer": bool(np.all(values == np.floor(values))),
            "objective": objective,
            "seconds": elapsed,
        })
    summary = pd.DataFrame(rows)
    report.write_csv(os.path.join(out, "reconcile_report.csv"), summary)
    print(report.console_table(summary, title="reconciliation report"))
    fig = report.violation_plot(os.path.join(out, "reconcile_violations.png"),
                                summary["method"].tolist(),
                                summary["periods_violated"].tolist())
    print(f"wrote {fig}")
    return 0


def _family_candidates(cfg: PipelineConfig, spec: HierarchySpec,
                       bottoms: list[PanelSeries], s_scale: float
                       ) -> list:
    """One candidate per distinct value combination of each family's key
    columns; members pool into a single shared model."""
    col_pos = {c: i for i, c in enumerate(spec.levels[1:])}
    weights = {
        b.series_id: float(np.count_nonzero(b.target) + 1) for b in bottoms
    }
    out = []
    for family in cfg.pool_families:
        missing = [c for c in family if c not in col_pos]
        if missing:
            raise DataError(
                f"pool family column {missing[0]!r} is not a key column")
        groups: dict[tuple[str, ...], list[str]] = {}
        for b in bottoms:
            key = tuple(b.key_path[col_pos[c]] for c in family)
            groups.setdefault(key, []).append(b.series_id)
        for key, members in sorted(groups.items()):
            if len(members) < 2:
                continue
            label = ",".join(f"{c}={v}" for c, v in zip(family, key)) or "all"
            out.append(build_candidate(
                f"pool/{label}", ((label, tuple(members)),),
                s=s_scale, nu=cfg.pool_nu, sample_weights=weights))
    return out


def cmd_pool_select(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    series, spec = _load_or_generate(cfg)
    bottoms = [s for s in series if s.key_path]
    grid = cfg.grid()
    factory = _learner_factory(cfg)
    plan = SplitPlan(horizon=cfg.horizon, n_windows=cfg.windows)
    singles = singleton_candidates([b.series_id for b in bottoms])
    # cost scale 1.0 first; recalibrated from the loss table unless fixed
    families = _family_candidates(cfg, spec, bottoms, cfg.pool_s or 1.0)
    candidates = singles + families
    table, dropped = build_loss_table(
        bottoms, candidates, plan, factory, grid,
        strategies=cfg.pool_strategies, feature_config=cfg.features,
        exog_policy=cfg.exog_policy, skip_unscorable=True)
    if dropped:
        print(f"note: {len(dropped)} series had no scorable validation "
              f"window and were left local (first: {dropped[0]})")
    if cfg.pool_s is None:
        s_scale = calibrate_s(table, families, cfg.pool_nu) if families else 1.0
        families = _family_candidates(cfg, spec, bottoms, s_scale)
        candidates = singles + families
        print(f"calibrated cost scale: {s_scale:.6g}")

    out = report.ensure_dir(cfg.output_dir)
    lam_grid = ([cfg.pool_lambda] if cfg.pool_lambda is not None
                else list(cfg.pool_lambda_grid))
    points = lambda_frontier(table, candidates, lam_grid)
    frontier_frame = pd.DataFrame([
        {"lam": p.lam, "mean_relative_loss": p.mean_relative_loss,
         "pools_opened": p.pools_opened,
         "open_ids": ";".join(p.open_ids), "objective": p.objective}
        for p in points
    ])
    report.write_csv(os.path.join(out, "frontier.csv"), frontier_frame)
    if cfg.pool_lambda is not None:
        chosen = cfg.pool_lambda
    elif len(points) >= 3:
        chosen = frontier_elbow(points)
    else:
        chosen = points[0].lam
    result = solve_pool_selection(table, candidates, chosen)
    assignment = selection_to_pools(result, candidates)
    pools_path = os.path.join(out, "pools.json")
    _save_pools(pools_path, assignment)
    print(report.console_table(
        frontier_frame[["lam", "mean_relative_loss", "pools_opened"]],
        title="pooling frontier"))
    print(f"chosen lambda: {chosen:g}  "
          f"(pools in use: {sum(assignment.active)})")
    fig = report.frontier_plot(
        os.path.join(out, "frontier.png"),
        [p.lam for p in points],
        [p.mean_relative_loss for p in points],
        [p.pools_opened for p in points], chosen)
    print(f"wrote {pools_path}\nwrote {fig}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    series, spec = _load_or_generate(cfg)
    by_id = {ps.series_id: ps for ps in series}
    frame_a, levels_a, win_a = _read_forecast_file(args.a)
    frame_b, levels_b, win_b = _read_forecast_file(args.b)
    paths_a, months_a = _median_paths(frame_a, levels_a)
    paths_b, months_b = _median_paths(frame_b, levels_b)
    if months_a != months_b:
        raise DataError("the two forecast files cover different months")
    shared = sorted(set(paths_a) & set(paths_b))
    if not shared:
        raise DataError("the two forecast files share no series")
    try:
        origin = series[0].timestamps.get_loc(
            pd.Period(months_a[0], freq="M"))
    except KeyError as exc:
        raise DataError(
            f"forecast month {months_a[0]} is outside the panel") from exc
    horizon = len(months_a)
    test_rng = range(origin, origin + horizon)
    if test_rng.stop > series[0].length:
        raise DataError("forecast months run past the panel end")

    def score(paths: dict[str, np.ndarray], sid: str) -> float:
        ps = by_id.get(sid)
        if ps is None:
            return float("nan")
        m = MetricInput(ps.target[:origin], ps.target[test_rng], paths[sid])
        try:
            return rmsse(m) if cfg.metric == "rmsse" else wmape(m)
        except MetricError:
            return float("nan")

    by_node = spec.node_by_id()
    diffs: dict[str, list[float]] = {}
    for sid in shared:
        if sid not in by_node:
            continue
        d = score(paths_a, sid) - score(paths_b, sid)
        if np.isnan(d):
            continue
        diffs.setdefault(_level_name(spec, by_node[sid].level), []).append(d)
        diffs.setdefault("all_series", []).append(d)

    rows = []
    order = [_level_name(spec, lv)
             for lv in sorted({n.level for n in spec.nodes})] + ["all_series"]
    for name in order:
        d = np.asarray(diffs.get(name, []), dtype=np.float64)
        row = {"level": name, "n_series": int(d.size), "metric": cfg.metric}
        if d.size == 0 or np.all(d == 0.0):
            row.update({"n_r": 0, "v": float("nan"), "p": float("nan"),
                        "r_rb": float("nan"), "hl": 0.0 if d.size else float("nan"),
                        "method": "skipped"})
            print(f"{name}: all differences zero or no series; test skipped")
        else:
            res = wilcoxon_signed_rank(d, cfg.alternative)
            row.update({"n_r": res.n_r, "v": res.v, "p": res.p,
                        "r_rb": res.r_rb, "hl": hodges_lehmann(d),
                        "method": res.method})
        rows.append(row)
    summary = pd.DataFrame(rows)
    out = report.ensure_dir(cfg.output_dir)
    report.write_csv(os.path.join(out, "evaluation.csv"), summary)
    print(report.console_table(
        summary, title=f"paired comparison a vs b ({cfg.metric}, "
        f"window {win_a} vs {win_b})"))
    plotted = summary[summary["method"] != "skipped"]
    if len(plotted):
        fig = report.effect_plot(os.path.join(out, "evaluation_effect.png"),
                                 plotted["level"].tolist(),
                                 plotted["r_rb"].tolist())
        print(f"wrote {fig}")
    return 0


def cmd_geometry_demo(args: argparse.Namespace) -> int:
    """Two-bottom worked example with known reconciled points."""
    spec = spec_from_key_paths([("b1",), ("b2",)], ("series",))
    s = build_summing_matrix(spec)
    # all vectors below print as (b1, b2, top); rows are (top, b1, b2)
    base = np.array([8.7, 1.5, 5.6])
    sigma = np.array([
        [16.6, 5.8, 10.8],
        [5.8, 4.0, 1.8],
        [10.8, 1.8, 9.0],
    ])
    targets = {
        "ols": np.array([2.033, 6.133, 8.167]),
        "mint": np.array([1.716, 6.086, 7.803]),
        "milp": np.array([2.0, 6.0, 8.0]),
    }
    got = {
        "ols": reconcile_ols(base, s),
        "mint": reconcile_mint(base, s, CovarianceSpec(sigma, 0.3)),
        "milp": reconcile_milp(base, s, ReconWeights(np.ones(3))).values,
    }
    all_ok = True
    for name in ("ols", "mint", "milp"):
        b1, b2, top = got[name][1], got[name][2], got[name][0]
        ok = bool(np.all(np.abs(np.array([b1, b2, top]) - targets[name]) < 1e-3))
        all_ok &= ok
        print(f"{name:5s} ({b1:.3f}, {b2:.3f}, {top:.3f})  "
              f"{'PASS' if ok else 'FAIL'}")
    if getattr(args, "out", None):
        out = report.ensure_dir(args.out)
        fig = report.geometry_plot(
            os.path.join(out, "geometry.png"), (1.5, 5.6),
            {k: (v[1], v[2]) for k, v in got.items()})
        print(f"wrote {fig}")
    return 0 if all_ok else 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="demandcast",
        description="Hierarchical intermittent-demand forecasting pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--out", help="output directory (overrides config)")

    p = sub.add_parser("simulate", help="generate and save a synthetic panel")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("forecast", help="rolling-origin quantile forecasts")
    common(p)
    p.add_argument("--strategy", help="override the configured strategy")
    p.add_argument("--pools", help="pools JSON for the drfam strategy")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("pool-select",
                       help="choose pooling sets along a lambda frontier")
    common(p)
    p.set_defaults(func=cmd_pool_select)

    p = sub.add_parser("reconcile",
                       help="make one window's base forecasts coherent")
    common(p)
    p.add_argument("--forecast", required=True,
                   help="forecast CSV written by the forecast command")
    p.set_defaults(func=cmd_reconcile)

    p = sub.add_parser("evaluate", help="paired accuracy comparison by level")
    common(p)
    p.add_argument("--a", required=True, help="first forecast CSV")
    p.add_argument("--b", required=True, help="second forecast CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("geometry-demo",
                       help="self-checking two-bottom reconciliation example")
    p.add_argument("--out", help="directory for the companion figure")
    p.set_defaults(func=cmd_geometry_demo)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except (DataError, MetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, LearnerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

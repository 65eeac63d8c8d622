"""Report rendering: CSV files at full precision, console tables at three
decimals, and companion figures written next to the delimited output."""

from __future__ import annotations

import os
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .errors import DataError


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def write_csv(path: str, frame: pd.DataFrame) -> str:
    """Full-precision CSV; float columns keep their shortest exact repr."""
    ensure_dir(os.path.dirname(path) or ".")
    frame.to_csv(path, index=False)
    return path


def console_table(frame: pd.DataFrame, title: str | None = None) -> str:
    """Fixed-width text table with floats at three decimals."""
    if frame.empty:
        raise DataError("nothing to tabulate")
    cells = [list(frame.columns)]
    for _, row in frame.astype(object).iterrows():
        rendered = []
        for v in row:
            if isinstance(v, (float, np.floating)):
                rendered.append("nan" if np.isnan(v) else f"{v:.3f}")
            else:
                rendered.append(str(v))
        cells.append(rendered)
    widths = [max(len(r[j]) for r in cells) for j in range(len(cells[0]))]
    lines = []
    if title:
        lines.append(title)
    header, *body = cells
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines)


def fan_chart(path: str, series_id: str, history_months: Sequence[str],
              history: np.ndarray, forecast_months: Sequence[str],
              quantile_block: np.ndarray,
              quantile_levels: Sequence[float]) -> str:
    """History line plus nested quantile bands over the forecast months."""
    fig, ax = plt.subplots(figsize=(9, 4.5))
    hx = np.arange(len(history_months))
    fx = len(history_months) - 1 + np.arange(1, len(forecast_months) + 1)
    ax.plot(hx, history, color="#22455f", lw=1.4, label="actuals")
    levels = list(quantile_levels)
    n = len(levels)
    for lo in range(n // 2):
        hi = n - 1 - lo
        ax.fill_between(fx, quantile_block[:, lo], quantile_block[:, hi],
                        color="#e0703c", alpha=0.14, lw=0)
    if n % 2 == 1:
        mid = n // 2
        ax.plot(fx, quantile_block[:, mid], color="#e0703c", lw=1.6,
                label="forecast median")
    ticks = list(range(0, len(history_months), max(1, len(history_months) // 8)))
    ax.set_xticks(ticks + [int(fx[-1])])
    ax.set_xticklabels([history_months[i] for i in ticks]
                       + [forecast_months[-1]], rotation=45, fontsize=8)
    ax.set_title(f"{series_id}: forecast bands")
    ax.set_ylabel("orders")
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    ensure_dir(os.path.dirname(path) or ".")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def frontier_plot(path: str, lams: Sequence[float], losses: Sequence[float],
                  opened: Sequence[int], chosen: float | None = None) -> str:
    """Mean relative loss and open-pool count along the lambda grid."""
    fig, ax = plt.subplots(figsize=(7, 4.2))
    x = np.arange(len(lams))
    ax.plot(x, losses, "o-", color="#22455f", label="mean relative loss")
    ax.set_xticks(x)
    ax.set_xticklabels([f"{v:g}" for v in lams], rotation=45, fontsize=8)
    ax.set_xlabel("lambda")
    ax.set_ylabel("mean relative loss")
    ax2 = ax.twinx()
    ax2.step(x, opened, where="mid", color="#e0703c", label="pools opened")
    ax2.set_ylabel("pools opened")
    if chosen is not None and chosen in list(lams):
        ax.axvline(list(lams).index(chosen), color="#888888", ls="--", lw=1)
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, fontsize=8)
    fig.tight_layout()
    ensure_dir(os.path.dirname(path) or ".")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def violation_plot(path: str, methods: Sequence[str],
                   violations: Sequence[int]) -> str:
    """Post-reconciliation coherence violations per method."""
    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(len(methods))
    ax.bar(x, violations, color="#e0703c")
    ax.set_xticks(x)
    ax.set_xticklabels(methods, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("periods with coherence violations")
    ax.set_title("coherence after reconciliation")
    fig.tight_layout()
    ensure_dir(os.path.dirname(path) or ".")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def effect_plot(path: str, levels: Sequence[str],
                effects: Sequence[float]) -> str:
    """Rank-biserial effect size per hierarchy level."""
    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(len(levels))
    colors = ["#22455f" if e <= 0 else "#e0703c" for e in effects]
    ax.bar(x, effects, color=colors)
    ax.axhline(0.0, color="#444444", lw=0.8)
    ax.set_xticks(x)
    ax.set_xticklabels(levels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("rank-biserial correlation")
    ax.set_title("paired accuracy comparison by level")
    fig.tight_layout()
    ensure_dir(os.path.dirname(path) or ".")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def geometry_plot(path: str, base: tuple[float, float],
                  points: dict[str, tuple[float, float]],
                  box: int = 10) -> str:
    """Bottom-series plane view: integer lattice, base point, reconciled
    points (the aggregate coordinate is implied by coherence)."""
    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    gx, gy = np.meshgrid(np.arange(box), np.arange(box))
    ax.scatter(gx, gy, s=6, color="#b9cbb4", zorder=1, label="integer lattice")
    ax.scatter(*base, marker="x", s=90, color="#22455f", zorder=3,
               label="base forecast")
    markers = {"ols": "o", "mint": "s", "milp": "D"}
    colors = {"ols": "#e0703c", "mint": "#8c5bb0", "milp": "#2f7d4f"}
    for name, (x, y) in points.items():
        ax.scatter(x, y, marker=markers.get(name, "o"), s=70,
                   color=colors.get(name, "#e0703c"), zorder=4, label=name)
    ax.set_xlabel("first bottom series")
    ax.set_ylabel("second bottom series")
    ax.set_title("reconciliation in the bottom plane")
    ax.legend(fontsize=8, loc="upper right")
    ax.set_aspect("equal")
    fig.tight_layout()
    ensure_dir(os.path.dirname(path) or ".")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path

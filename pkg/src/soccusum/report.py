"""File outputs for experiments: delimited tables, JSON summaries, figures.

CSV and JSON are the machine contract; alongside them the same data is
rendered to PNG with matplotlib for quick inspection.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .experiments import ExperimentReport, alarm_cdf


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def write_replicates_csv(report: ExperimentReport, path: Path) -> None:
    """One row per replicate: alarm times in both clocks plus validity."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "arm", "replicate", "master_seed",
                    "alarm_time_soc", "alarm_time_abs",
                    "kappa_soc", "kappa_abs", "valid", "error"])
        for o in report.outcomes:
            w.writerow([
                report.scenario, report.arm, o.replicate, report.master_seed,
                "" if o.alarm_soc is None else o.alarm_soc,
                "" if o.alarm_abs is None else o.alarm_abs,
                "" if o.kappa_soc is None else o.kappa_soc,
                "" if o.kappa_abs is None else o.kappa_abs,
                int(o.valid), o.error or "",
            ])


def write_summary_json(summaries: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_jsonable(summaries), fh, indent=2)
        fh.write("\n")


def write_trace_csv(result, path: Path) -> None:
    """Chart/limit trace of a single monitoring run."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_soc", "t_abs", "chart", "limit", "survivors",
                    "max_bootstrap_stat", "theta_hat_norm"])
        for i in range(result.trace_t.size):
            lim = result.trace_limit[i]
            w.writerow([
                int(result.trace_t[i]), int(result.trace_t_abs[i]),
                f"{result.trace_chart[i]:.10g}",
                "inf" if math.isinf(lim) else f"{lim:.10g}",
                int(result.trace_survivors[i]),
                f"{result.trace_max_boot[i]:.10g}",
                f"{result.trace_theta_norm[i]:.10g}",
            ])


def plot_chart_trace(result, path: Path, title: str = "") -> None:
    """Chart statistic against its dynamic control limit over time."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7, 4))
    t = result.trace_t
    ax.plot(t, result.trace_chart, label="chart statistic", lw=1.6)
    lim = np.where(np.isinf(result.trace_limit), result.trace_max_boot,
                   result.trace_limit)
    ax.plot(t, lim, label="control limit", lw=1.4, ls="--")
    if result.alarm_soc is not None:
        ax.axvline(result.alarm_soc, color="crimson", ls=":", lw=1.2,
                   label=f"alarm at {result.alarm_soc}")
    ax.set_xlabel("monitored observation")
    ax.set_ylabel("statistic")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_alarm_cdfs(reports: dict[str, ExperimentReport], path: Path,
                    title: str = "") -> None:
    """Cumulative distribution of alarm times, one curve per arm."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, rep in reports.items():
        grid, cdf, censored = alarm_cdf(rep)
        ax.step(grid, cdf, where="post", label=f"{name} (no alarm: {censored:.0%})")
        kappas = [o.kappa_soc for o in rep.valid_outcomes if o.kappa_soc is not None]
        if kappas:
            ax.axvline(float(np.median(kappas)), color="gray", ls=":", lw=1.0)
    ax.set_xlabel("monitored observation")
    ax.set_ylabel("P(alarm by t)")
    ax.set_ylim(0, 1)
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)

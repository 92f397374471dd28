"""Replicate-level experiment runner and summary metrics.

A replicate is one simulated stream plus one or more monitoring runs on it.
Replicates are seeded independently from (master seed, replicate index), so
results do not depend on execution order or the degree of parallelism, and
arms that share a master seed see identical streams wherever their generative
configs coincide (paired comparisons).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import rankdata

from .estimation import EstimationError
from .learners import threshold_classify
from .monitor import MonitorConfig, MonitoringError, run_monitor
from .simgen import ScenarioConfig, resolve_schedule, simulate_run

NAIVE_ALLOWANCE = 0.05


@dataclass
class ReplicateOutcome:
    replicate: int
    alarm_soc: int | None
    alarm_abs: int | None
    kappa_soc: int | None
    kappa_abs: int | None
    valid: bool
    error: str | None = None
    b_adequacy_violations: int = 0
    trace: tuple | None = None


@dataclass
class ExperimentReport:
    """Per-replicate alarm record plus derived operating characteristics."""

    scenario: str
    arm: str
    n_replicates: int
    horizon_soc: int
    master_seed: int
    outcomes: list[ReplicateOutcome] = field(default_factory=list)

    @property
    def invalid_count(self) -> int:
        return sum(1 for o in self.outcomes if not o.valid)

    @property
    def valid_outcomes(self) -> list[ReplicateOutcome]:
        return [o for o in self.outcomes if o.valid]

    def alarm_times(self) -> np.ndarray:
        """Alarm times in monitored-stream index; +inf when never fired."""
        return np.array(
            [o.alarm_soc if o.alarm_soc is not None else math.inf
             for o in self.valid_outcomes]
        )

    def metrics(self) -> dict:
        valid = self.valid_outcomes
        n = len(valid)
        out: dict = {
            "n_replicates": self.n_replicates,
            "n_valid": n,
            "invalid_count": self.invalid_count,
            "horizon_soc": self.horizon_soc,
        }
        if n == 0:
            return out
        times = self.alarm_times()
        alarmed = np.isfinite(times)
        out["alarm_rate"] = float(alarmed.mean())
        false_alarms = 0
        for o in valid:
            if o.alarm_soc is None:
                continue
            if o.kappa_soc is None or o.alarm_soc < o.kappa_soc:
                false_alarms += 1
        out["false_alarm_rate"] = false_alarms / n
        out["power"] = float(alarmed.mean())
        out["median_alarm_soc"] = float(np.median(times))
        delays = np.array(
            [o.alarm_soc - o.kappa_soc for o in valid
             if o.alarm_soc is not None and o.kappa_soc is not None
             and o.alarm_soc >= o.kappa_soc]
        )
        if delays.size:
            qs = np.percentile(delays, [25, 50, 75])
            out["delay_quantiles"] = {"p25": float(qs[0]), "p50": float(qs[1]),
                                      "p75": float(qs[2])}
        with_kappa = [o for o in valid if o.kappa_soc is not None]
        if with_kappa:
            delays_all = np.array([
                (o.alarm_soc - o.kappa_soc) if o.alarm_soc is not None else math.inf
                for o in with_kappa
            ])
            out["median_delay"] = float(np.median(delays_all))
        out["b_adequacy_replicates"] = sum(
            1 for o in valid if o.b_adequacy_violations > 0
        )
        return out


def alarm_cdf(report: ExperimentReport, grid=None):
    """Empirical distribution of alarm times on a grid; the never-fired mass
    is reported separately so the curve plus censoring sums to one."""
    times = report.alarm_times()
    if grid is None:
        grid = np.arange(0, report.horizon_soc + 1)
    grid = np.asarray(grid)
    if times.size == 0:
        return grid, np.zeros(grid.size), 1.0
    cdf = (times[None, :] <= grid[:, None]).mean(axis=1)
    censored = float(np.isinf(times).mean())
    return grid, cdf, censored


def auc(predictions, outcomes) -> float:
    """Rank-statistic area under the ROC curve."""
    y = np.asarray(outcomes)
    p = np.asarray(predictions, dtype=float)
    n1 = int((y == 1).sum())
    n0 = int((y == 0).sum())
    if n1 == 0 or n0 == 0:
        raise ValueError("AUC undefined when only one outcome class is present")
    ranks = rankdata(p)
    return float((ranks[y == 1].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def calibration_bins(predictions, outcomes, n_bins: int = 10):
    """Equal-width probability bins: count, mean prediction, observed rate."""
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(outcomes, dtype=float)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    idx = np.clip(np.digitize(p, edges[1:-1]), 0, n_bins - 1)
    rows = []
    for b in range(n_bins):
        mask = idx == b
        rows.append({
            "bin": b,
            "lo": float(edges[b]),
            "hi": float(edges[b + 1]),
            "count": int(mask.sum()),
            "mean_pred": float(p[mask].mean()) if mask.any() else math.nan,
            "observed": float(y[mask].mean()) if mask.any() else math.nan,
        })
    return rows


def _replicate_seeds(master_seed: int, replicate: int) -> tuple:
    return (master_seed, replicate, 0), (master_seed, replicate, 1)


def run_replicate(
    scenario: ScenarioConfig,
    monitor_cfgs: dict[str, MonitorConfig],
    master_seed: int,
    replicate: int,
    monitor_fraction: float | None = None,
    keep_trace: bool = False,
) -> dict[str, ReplicateOutcome]:
    """Simulate one stream and run every monitoring arm on it."""
    data_seed, monitor_seed = _replicate_seeds(master_seed, replicate)
    horizon = max(cfg.horizon for cfg in monitor_cfgs.values())
    resolved = resolve_schedule(scenario, horizon)
    out: dict[str, ReplicateOutcome] = {}
    try:
        run = simulate_run(resolved, soc_target=horizon, seed=data_seed,
                           monitor_fraction=monitor_fraction)
    except Exception as exc:  # generation failed: every arm is invalid
        for arm in monitor_cfgs:
            out[arm] = ReplicateOutcome(replicate, None, None, None, None,
                                        valid=False, error=str(exc))
        return out
    for arm, cfg in monitor_cfgs.items():
        cfg_run = replace(cfg, master_seed=monitor_seed)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = run_monitor(cfg_run, run.monitor_stream)
            out[arm] = ReplicateOutcome(
                replicate=replicate,
                alarm_soc=res.alarm_soc,
                alarm_abs=res.alarm_abs,
                kappa_soc=run.kappa_monitor_soc,
                kappa_abs=run.kappa_abs,
                valid=True,
                b_adequacy_violations=res.diagnostics["b_adequacy_violations"],
                trace=(res.trace_t, res.trace_chart, res.trace_limit) if keep_trace else None,
            )
        except (EstimationError, MonitoringError) as exc:
            out[arm] = ReplicateOutcome(replicate, None, None,
                                        run.kappa_monitor_soc, run.kappa_abs,
                                        valid=False, error=str(exc))
    return out


def run_experiment(
    scenario: ScenarioConfig,
    monitor_cfgs: MonitorConfig | dict[str, MonitorConfig],
    n_replicates: int,
    master_seed: int,
    jobs: int = 1,
    monitor_fraction: float | None = None,
    keep_trace: bool = False,
):
    """Run seeded replicates; returns one report per monitoring arm.

    Passing a single config returns a single report; a dict of configs shares
    each replicate's stream across arms (paired design).
    """
    single = isinstance(monitor_cfgs, MonitorConfig)
    cfgs = {"default": monitor_cfgs} if single else dict(monitor_cfgs)
    if n_replicates < 0:
        raise ValueError("n_replicates must be nonnegative")

    def work(r):
        return run_replicate(scenario, cfgs, master_seed, r,
                             monitor_fraction=monitor_fraction, keep_trace=keep_trace)

    if n_replicates == 0:
        per_rep = []
    elif jobs == 1:
        per_rep = [work(r) for r in range(n_replicates)]
    else:
        per_rep = Parallel(n_jobs=jobs)(delayed(work)(r) for r in range(n_replicates))

    horizon = max(cfg.horizon for cfg in cfgs.values())
    reports = {}
    for arm, cfg in cfgs.items():
        rep = ExperimentReport(
            scenario=scenario.name, arm=arm, n_replicates=n_replicates,
            horizon_soc=cfg.horizon, master_seed=master_seed,
        )
        rep.outcomes = [res[arm] for res in per_rep]
        reports[arm] = rep
    return reports["default"] if single else reports


# --------------------------------------------------------------------------
# naive misclassification-rate baseline
# --------------------------------------------------------------------------

def naive_misclass_cusum(
    errors: np.ndarray,
    m: int,
    horizon: int,
    alpha: float,
    B: int,
    seed,
    allowance: float = NAIVE_ALLOWANCE,
) -> int | None:
    """One-sided Bernoulli CUSUM on a misclassification stream.

    The reference rate is estimated on the first ``m`` observations; the
    static limit is the upper alpha quantile of the same chart applied to
    synthetic error streams drawn from the fitted null.
    """
    errors = np.asarray(errors, dtype=float)[:horizon]
    if errors.shape[0] <= m:
        return None
    p0 = float(errors[:m].mean())
    incr = errors[m:] - p0 - allowance

    def running_max(v):
        # S_t = max(0, S_{t-1} + v_t), evaluated for every t
        s = 0.0
        out = np.empty(v.shape[-1])
        if v.ndim == 1:
            for i, val in enumerate(v):
                s = max(0.0, s + val)
                out[i] = s
            return out
        raise ValueError

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n_steps = incr.shape[0]
    boot = (rng.random((B, n_steps)) < p0).astype(float) - p0 - allowance
    # vectorized recursive maximum over sequences
    S = np.zeros(B)
    boot_max = np.zeros(B)
    for t in range(n_steps):
        S = np.maximum(0.0, S + boot[:, t])
        boot_max = np.maximum(boot_max, S)
    h = float(np.quantile(boot_max, 1.0 - alpha, method="higher"))
    path = running_max(incr)
    hits = np.flatnonzero(path > h)
    return int(m + hits[0] + 1) if hits.size else None


def run_naive_experiment(
    scenario: ScenarioConfig,
    mon_cfg: MonitorConfig,
    n_replicates: int,
    master_seed: int,
    cutoff: float = 0.7,
    jobs: int = 1,
) -> dict[str, ExperimentReport]:
    """Score-based monitor versus the naive misclassification chart on
    identical streams."""
    score_rep = ExperimentReport(scenario.name, "score", n_replicates,
                                 mon_cfg.horizon, master_seed)
    naive_rep = ExperimentReport(scenario.name, "naive", n_replicates,
                                 mon_cfg.horizon, master_seed)

    def work(r):
        data_seed, monitor_seed = _replicate_seeds(master_seed, r)
        resolved = resolve_schedule(scenario, mon_cfg.horizon)
        run = simulate_run(resolved, soc_target=mon_cfg.horizon, seed=data_seed)
        stream = run.monitor_stream
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = run_monitor(replace(mon_cfg, master_seed=monitor_seed), stream)
            score = ReplicateOutcome(r, res.alarm_soc, res.alarm_abs,
                                     run.kappa_monitor_soc, run.kappa_abs, True)
        except (EstimationError, MonitoringError) as exc:
            score = ReplicateOutcome(r, None, None, run.kappa_monitor_soc,
                                     run.kappa_abs, False, error=str(exc))
        errors = (threshold_classify(stream.prediction, cutoff) != stream.y).astype(float)
        alarm = naive_misclass_cusum(
            errors, mon_cfg.m, mon_cfg.horizon, mon_cfg.alpha, mon_cfg.B,
            seed=(master_seed, r, 2),
        )
        alarm_abs = int(stream.t_abs[alarm - 1]) if alarm is not None else None
        naive = ReplicateOutcome(r, alarm, alarm_abs, run.kappa_monitor_soc,
                                 run.kappa_abs, True)
        return score, naive

    if jobs == 1:
        results = [work(r) for r in range(n_replicates)]
    else:
        results = Parallel(n_jobs=jobs)(delayed(work)(r) for r in range(n_replicates))
    score_rep.outcomes = [s for s, _ in results]
    naive_rep.outcomes = [nv for _, nv in results]
    return {"score": score_rep, "naive": naive_rep}


def learner_diagnostics(run, n_periods: int = 4) -> dict:
    """Per-period discrimination and calibration of the monitored predictions."""
    stream = run.monitor_stream
    n = len(stream)
    out = {"auc_periods": [], "calibration_periods": []}
    for k in range(n_periods):
        lo, hi = (n * k) // n_periods, (n * (k + 1)) // n_periods
        p, y = stream.prediction[lo:hi], stream.y[lo:hi]
        try:
            out["auc_periods"].append(auc(p, y))
        except ValueError:
            out["auc_periods"].append(math.nan)
        out["calibration_periods"].append(calibration_bins(p, y, n_bins=5))
    return out

"""End-to-end monitoring loop: stream in, chart trace and alarm time out.

A run consumes a standard-of-care observation stream, estimates the
pre-change parameter on a warm-up window (unless it is known), then walks the
monitoring horizon in batches: score the batch, advance the bootstrap
ensemble, place the control limit, and fire an alarm on the first strict
exceedance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from . import estimation
from .chart import ScorePrefix, append_score, cusum_stat
from .dcl import BOOT_MODES, BootstrapEnsemble, LinearSpending, MIN_EXCEEDERS
from .models import ModelKind, cross_info, score_delta

CONDITIONING = ("pred", "pred+xt")
THETA_MODES = ("plugin", "known")


class MonitoringError(RuntimeError):
    """The monitoring run could not proceed."""


class StreamExhaustedError(MonitoringError):
    """The stream ended before the warm-up window was filled."""


@dataclass
class SocStream:
    """Standard-of-care observations, in arrival order.

    ``soc_index`` is this stream's own 1-based index, ``t_abs`` the absolute
    patient time at which each observation arrived.  ``prediction`` is the
    model's predicted risk (a probability).
    """

    soc_index: np.ndarray
    t_abs: np.ndarray
    prediction: np.ndarray
    x_tilde: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return self.y.shape[0]

    def take(self, mask: np.ndarray, reindex: bool = True) -> "SocStream":
        idx = np.flatnonzero(mask)
        return SocStream(
            soc_index=np.arange(1, idx.size + 1) if reindex else self.soc_index[idx],
            t_abs=self.t_abs[idx],
            prediction=self.prediction[idx],
            x_tilde=self.x_tilde[idx],
            y=self.y[idx],
        )


def assemble_predictors(stream: SocStream, conditioning: str) -> np.ndarray:
    """Build the monitored predictor matrix: log-odds of the prediction,
    optionally the extra covariate, and a trailing intercept."""
    if conditioning not in CONDITIONING:
        raise ValueError(f"conditioning must be one of {CONDITIONING}")
    pred = np.clip(stream.prediction, 1e-12, 1.0 - 1e-12)
    cols = [logit(pred)]
    if conditioning == "pred+xt":
        cols.append(stream.x_tilde)
    cols.append(np.ones(len(stream)))
    return np.column_stack(cols)


@dataclass
class MonitorConfig:
    """Everything a monitoring run needs besides the stream itself."""

    m: int
    K: float
    alpha: float = 0.1
    B: int = 500
    batch_size: int = 10
    kind: ModelKind = ModelKind.LOGIT_SHIFT
    norm: str = "l1"
    conditioning: str = "pred"
    theta_mode: str = "plugin"
    theta0: np.ndarray | None = None
    master_seed: int = 0
    bootstrap_mode: str = "refit"

    def __post_init__(self):
        self.kind = ModelKind(self.kind)
        if self.bootstrap_mode not in BOOT_MODES:
            raise ValueError(f"bootstrap_mode must be one of {BOOT_MODES}")
        if self.m < 2:
            raise ValueError("warm-up size m must be at least 2")
        if self.K <= 1:
            raise ValueError("horizon factor K must exceed 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        if self.theta_mode not in THETA_MODES:
            raise ValueError(f"theta_mode must be one of {THETA_MODES}")
        if self.theta_mode == "known" and self.theta0 is None:
            raise ValueError("known mode requires theta0")
        if self.conditioning not in CONDITIONING:
            raise ValueError(f"conditioning must be one of {CONDITIONING}")
        if self.norm not in ("l1", "l2"):
            raise ValueError("norm must be 'l1' or 'l2'")

    @property
    def horizon(self) -> int:
        return int(round(self.m * self.K))


@dataclass
class MonitorResult:
    """Alarm time (if any), the chart/limit trace, and run diagnostics."""

    alarm_soc: int | None
    alarm_abs: int | None
    trace_t: np.ndarray
    trace_t_abs: np.ndarray
    trace_chart: np.ndarray
    trace_limit: np.ndarray
    trace_survivors: np.ndarray
    trace_max_boot: np.ndarray
    trace_theta_norm: np.ndarray
    final_theta_hat: np.ndarray | None
    diagnostics: dict = field(default_factory=dict)

    @property
    def alarmed(self) -> bool:
        return self.alarm_soc is not None


def run_monitor(cfg: MonitorConfig, stream: SocStream) -> MonitorResult:
    """Run the monitoring procedure over one stream."""
    horizon = cfg.horizon
    n_avail = min(len(stream), horizon)
    if n_avail <= cfg.m:
        raise StreamExhaustedError(
            f"stream supplies {len(stream)} observations; warm-up needs more than {cfg.m}"
        )
    Z = assemble_predictors(stream, cfg.conditioning)[:n_avail]
    y = np.asarray(stream.y, dtype=float)[:n_avail]
    t_abs = np.asarray(stream.t_abs)[:n_avail]
    q = Z.shape[1]
    d = q  # full-length shift by default

    plugin = cfg.theta_mode == "plugin"
    theta_lag: list[tuple[int, int]] = []
    if plugin:
        mle = estimation.fit(Z[: cfg.m], y[: cfg.m], max_index=cfg.m)
        theta_cur = mle.theta_hat
    else:
        mle = None
        theta_cur = np.asarray(cfg.theta0, dtype=float)
        if theta_cur.shape != (q,):
            raise ValueError(f"theta0 must have shape ({q},) for conditioning {cfg.conditioning!r}")

    sf = LinearSpending(cfg.alpha, cfg.K)
    ens = BootstrapEnsemble(
        B=cfg.B, d=d, q=q, n_steps=horizon, master_seed=cfg.master_seed,
        corrected=plugin, mode=cfg.bootstrap_mode,
    )
    if plugin:
        ens.resample_window(Z[: cfg.m], theta_cur, first_index=1)

    prefix = ScorePrefix(start_index=cfg.m + 1, dim=d)
    rows = []
    alarm_soc: int | None = None
    lambda_jitter = 0
    refit_mode = plugin and cfg.bootstrap_mode == "refit"

    start = cfg.m
    batch_no = 0
    while start < n_avail and alarm_soc is None:
        stop = min(start + cfg.batch_size, n_avail)
        idx = np.arange(start, stop)  # 0-based positions; stream indices are idx+1
        Zb, yb = Z[idx], y[idx]
        theta_prev = theta_cur
        if plugin:
            theta_lag.append((int(idx[0] + 1), int(mle.max_index)))

        batch_scores = score_delta(theta_prev, Zb, yb, cfg.kind)
        append_score(prefix, batch_scores.sum(axis=0))
        chart_val = cusum_stat(prefix, cfg.norm)

        batch_weight = None
        if plugin and not refit_mode:
            # cumulative observed information over everything before this
            # batch, evaluated at the estimate the batch is scored with
            w_hist = _bernoulli_weights(Z[:start], theta_prev)
            lam = (Z[:start] * w_hist[:, None]).T @ Z[:start]
            if np.linalg.cond(lam) > 1e10:
                lam = lam + 1e-6 * np.eye(q)
                lambda_jitter += 1
            V_sum = cross_info(theta_prev, Zb, cfg.kind).sum(axis=0)
            batch_weight = np.linalg.solve(lam.T, V_sum.T).T

        # early batches move each bootstrap fit the most; give them full
        # Newton convergence, then settle into cheap warm-started steps
        refit_iters = 3 if batch_no < 5 else 1
        ens.step_batch(Zb, Z[:stop] if refit_mode else None, idx + 1, theta_prev,
                       cfg.kind, batch_weight, refit_iters=refit_iters)
        h, max_boot = ens.update_control_limit(sf, stop, cfg.m, cfg.norm)
        ens.snapshot()
        batch_no += 1

        rows.append((stop, t_abs[stop - 1], chart_val, h, ens.n_survivors, max_boot,
                     float(np.linalg.norm(theta_prev))))
        if chart_val > h:
            alarm_soc = stop
            break
        if plugin:
            mle = estimation.sequential_update(mle, Zb, yb, max_index=stop)
            theta_cur = mle.theta_hat
        start = stop

    if ens.b_adequacy_violations:
        warnings.warn(
            "fewer than %d bootstrap sequences crossed the control limit at %d "
            "evaluation(s); consider a larger B" % (MIN_EXCEEDERS, ens.b_adequacy_violations),
            RuntimeWarning,
            stacklevel=2,
        )

    trace_t = np.array([r[0] for r in rows], dtype=int)
    return MonitorResult(
        alarm_soc=alarm_soc,
        alarm_abs=int(t_abs[alarm_soc - 1]) if alarm_soc is not None else None,
        trace_t=trace_t,
        trace_t_abs=np.array([r[1] for r in rows], dtype=int),
        trace_chart=np.array([r[2] for r in rows], dtype=float),
        trace_limit=np.array([r[3] for r in rows], dtype=float),
        trace_survivors=np.array([r[4] for r in rows], dtype=int),
        trace_max_boot=np.array([r[5] for r in rows], dtype=float),
        trace_theta_norm=np.array([r[6] for r in rows], dtype=float),
        final_theta_hat=theta_cur.copy() if plugin else None,
        diagnostics={
            "theta_lag": theta_lag,
            "b_adequacy_violations": ens.b_adequacy_violations,
            "lambda_jittered": lambda_jitter,
            "eliminated_total": ens.eliminated_total,
            "spent_alpha": ens.spent_alpha,
            "truncated": n_avail < horizon,
        },
    )


def _bernoulli_weights(Z: np.ndarray, theta: np.ndarray) -> np.ndarray:
    mu = expit(Z @ theta)
    return mu * (1.0 - mu)


def split_stream(
    stream: SocStream, monitor_fraction: float, seed
) -> tuple[SocStream, SocStream]:
    """Deterministically route each observation to monitoring or updating.

    Every observation goes to exactly one side; assignment depends only on
    the seed and the observation's position, so a recorded stream splits the
    same way it did when generated.
    """
    if not 0.0 < monitor_fraction <= 1.0:
        raise ValueError("monitor fraction must lie in (0, 1]")
    mask = split_assignments(len(stream), monitor_fraction, seed)
    return stream.take(mask), stream.take(~mask)


def split_assignments(n: int, monitor_fraction: float, seed) -> np.ndarray:
    """Monitor-side membership for positions 1..n (True = monitoring)."""
    if monitor_fraction >= 1.0:
        return np.ones(n, dtype=bool)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return rng.random(n) < monitor_fraction

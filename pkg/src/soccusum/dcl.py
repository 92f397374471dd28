"""Parametric-bootstrap ensemble and alpha-spending dynamic control limits.

A fixed pool of B bootstrap sequences is resampled in lockstep with the
observed stream: at each step every surviving sequence draws a synthetic
outcome from the current null fit, and at each evaluation time the control
limit is placed so that the realized share of rejected bootstrap sequences
tracks the alpha-spending schedule.  Sequences whose chart statistic exceeds
the limit are retired and never resampled again.

In the estimated-parameter mode each bootstrap chart must reproduce the extra
variability of sequential re-estimation.  Two constructions are provided:

* ``refit`` (default): every surviving sequence maintains its own running
  maximum-likelihood fit on its resampled history and is scored exactly like
  the observed chart (nonanticipative plugin scores).  This replicates the
  observed statistic's finite-sample law rather than its linearization.
* ``linear``: the cumulative bootstrap shift-score is augmented with the
  first-order correction ``V Lambda^{-1} (cumulative theta-score)`` built
  from the observed information, the asymptotic approximating process.  It is
  cheaper but noticeably anti-conservative when the monitored predictor has
  wide spread.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .models import ModelKind, clamp_prob

MIN_EXCEEDERS = 5
BOOT_MODES = ("refit", "linear")
_THETA_CLIP = 30.0


class SpendExhaustedError(RuntimeError):
    """More eliminations were scheduled than bootstrap sequences remain."""


@dataclass(frozen=True)
class LinearSpending:
    """Linear alpha-spending schedule on relative time v in [1, K].

    Spends nothing at v=1 and the full budget at v=K.  Other shapes can be
    supplied anywhere a spending function is accepted by implementing
    ``cumulative``.
    """

    alpha_total: float
    horizon_factor: float  # K

    def __post_init__(self):
        if not 0.0 < self.alpha_total < 1.0:
            raise ValueError("alpha_total must lie in (0, 1)")
        if self.horizon_factor <= 1.0:
            raise ValueError("horizon factor K must exceed 1")

    def cumulative(self, v: float) -> float:
        if v < 1.0 - 1e-9 or v > self.horizon_factor + 1e-9:
            raise ValueError(f"relative time {v} outside [1, {self.horizon_factor}]")
        v = min(max(v, 1.0), self.horizon_factor)
        return self.alpha_total * (v - 1.0) / (self.horizon_factor - 1.0)


def alpha_spend(sf: LinearSpending, v: float) -> float:
    """Cumulative alpha spent by relative time v."""
    return sf.cumulative(v)


def resample_outcome(z: np.ndarray, theta_hat_prev: np.ndarray, rng: np.random.Generator) -> int:
    """Draw one synthetic outcome from the null fit at the previous estimate."""
    p = clamp_prob(expit(np.asarray(z, float) @ np.asarray(theta_hat_prev, float)))
    return int(rng.random() < p)


def phi_stat(
    delta_scores: np.ndarray,
    theta_prefixes: np.ndarray | None,
    weights: np.ndarray | None,
    start_index: int,
    t_prime: int,
    t: int,
    norm: str = "l1",
) -> float:
    """First-order corrected statistic for one sequence and one (t', t) pair.

    ``delta_scores[k]`` is the shift score of monitored observation
    ``start_index + k``; ``weights[k]`` is the d×q matrix
    ``V(i) Lambda^{-1}`` and ``theta_prefixes[k]`` the cumulative theta-score
    it multiplies (the caller chooses the estimator granularity).
    ``weights=None`` drops the correction term, reducing to the plain
    cumulative score.
    """
    delta_scores = np.asarray(delta_scores, dtype=float)
    if not (start_index <= t_prime <= t):
        raise ValueError("need start_index <= t_prime <= t")
    total = np.zeros(delta_scores.shape[1])
    for i in range(t_prime, t + 1):
        k = i - start_index
        total = total + delta_scores[k]
        if weights is not None:
            total = total + weights[k] @ theta_prefixes[k]
    if norm == "l1":
        return float(np.abs(total).sum())
    return float(np.sqrt((total * total).sum()))


def _hess_packing(q: int) -> list[tuple[int, int]]:
    return [(a, b) for a in range(q) for b in range(a, q)]


class BootstrapEnsemble:
    """Survivor pool of bootstrap sequences with per-sequence outcome streams.

    Each sequence owns an independent uniform stream keyed by
    ``(master_seed, sequence id)``, so parallel and serial stepping produce
    identical draws and retiring one sequence never perturbs another.
    """

    def __init__(
        self,
        B: int,
        d: int,
        q: int,
        n_steps: int,
        master_seed,
        corrected: bool,
        mode: str = "refit",
    ):
        if B < 1:
            raise ValueError("need at least one bootstrap sequence")
        if mode not in BOOT_MODES:
            raise ValueError(f"bootstrap mode must be one of {BOOT_MODES}")
        self.B = B
        self.d = d
        self.q = q
        self.corrected = corrected
        self.mode = mode
        self.survivor_mask = np.ones(B, dtype=bool)
        self.combined_prefix = np.zeros((B, d))
        self.theta_score_sum = np.zeros((B, q))  # linear mode only
        self.snapshots: list[np.ndarray] = [np.zeros((B, d))]
        self.spent_alpha = 0.0
        self.carry = 0.0
        self.eliminated_total = 0
        self.last_spend_v: float | None = None
        self.b_adequacy_violations = 0
        # refit-mode state: per-sequence outcomes and running fits
        self.outcomes: np.ndarray | None = None
        self.theta_b: np.ndarray | None = None
        self._hist_len = 0
        self._pack = _hess_packing(q)
        ss = np.random.SeedSequence(master_seed)
        children = ss.spawn(B)
        # one uniform per time step per sequence, drawn up front so that the
        # stream depends only on (master_seed, sequence id)
        self._uniforms = np.empty((B, n_steps))
        for b, child in enumerate(children):
            self._uniforms[b] = np.random.default_rng(child).random(n_steps)
        if corrected and mode == "refit":
            self.outcomes = np.zeros((B, n_steps))

    @property
    def survivors(self) -> np.ndarray:
        return np.flatnonzero(self.survivor_mask)

    @property
    def n_survivors(self) -> int:
        return int(self.survivor_mask.sum())

    # -- per-sequence refits (vectorized Newton over the survivor block) ----

    def _newton(self, Z: np.ndarray, rows: np.ndarray, iters: int) -> None:
        n = Z.shape[0]
        Y = self.outcomes[rows, :n]
        beta = self.theta_b[rows]
        packed = np.empty((n, len(self._pack)))
        for c, (a, b) in enumerate(self._pack):
            packed[:, c] = Z[:, a] * Z[:, b]
        q = self.q
        H = np.empty((rows.size, q, q))
        for _ in range(iters):
            mu = expit(beta @ Z.T)
            grad = (Y - mu) @ Z
            wpack = (mu * (1.0 - mu)) @ packed
            for c, (a, b) in enumerate(self._pack):
                H[:, a, b] = wpack[:, c]
                H[:, b, a] = wpack[:, c]
            H[:, range(q), range(q)] += 1e-6
            beta = beta + np.linalg.solve(H, grad[:, :, None])[:, :, 0]
            np.clip(beta, -_THETA_CLIP, _THETA_CLIP, out=beta)
        self.theta_b[rows] = beta

    def resample_window(self, Z: np.ndarray, theta_hat: np.ndarray, first_index: int) -> None:
        """Resample outcomes for the pre-monitoring window and initialize the
        per-sequence state (running fits or theta-score sums)."""
        if not self.corrected:
            return
        Z = np.asarray(Z, dtype=float)
        mu = clamp_prob(expit(Z @ theta_hat))
        idx = np.arange(first_index - 1, first_index - 1 + Z.shape[0])
        ystar = (self._uniforms[:, idx] < mu[None, :]).astype(float)
        if self.mode == "refit":
            self.outcomes[:, idx] = ystar
            self._hist_len = first_index - 1 + Z.shape[0]
            self.theta_b = np.tile(np.asarray(theta_hat, float), (self.B, 1))
            self._newton(Z, np.arange(self.B), iters=4)
        else:
            self.theta_score_sum += (ystar - mu[None, :]) @ Z

    def step_batch(
        self,
        Z_batch: np.ndarray,
        Z_hist: np.ndarray | None,
        indices: np.ndarray,
        theta_prev: np.ndarray,
        kind: ModelKind,
        batch_weight: np.ndarray | None,
        refit_iters: int = 1,
    ) -> None:
        """Advance surviving sequences through one batch of observations.

        Outcomes are resampled from the null fit at ``theta_prev`` (the
        estimate the observed chart scores this batch with).  In refit mode
        each survivor is scored at its own lagged fit and then refit on
        ``Z_hist`` (all predictors up to and including this batch); in linear
        mode ``batch_weight`` is the d×q matrix ``(sum_i V(i)) Lambda^{-1}``
        applied to the sequence's theta-score sum frozen at the previous
        boundary.  Both are None in the known-parameter mode.
        """
        surv = self.survivor_mask
        if not surv.any():
            return
        Z_batch = np.asarray(Z_batch, dtype=float)
        cols = np.asarray(indices) - 1
        mu = clamp_prob(expit(Z_batch @ theta_prev))
        u = self._uniforms[np.ix_(surv, cols)]
        ystar = (u < mu[None, :]).astype(float)  # (S, nb)
        if self.corrected and self.mode == "refit":
            rows = self.survivors
            self.outcomes[np.ix_(rows, cols)] = ystar
            self._hist_len = int(cols[-1]) + 1
            mu_b = clamp_prob(expit(self.theta_b[rows] @ Z_batch.T))  # (S, nb)
            resid = ystar - mu_b
            if kind is ModelKind.RISK_SHIFT:
                resid = resid / (mu_b * (1.0 - mu_b))
            self.combined_prefix[rows] += resid @ Z_batch
            self._newton(np.asarray(Z_hist, dtype=float), rows, iters=refit_iters)
            return
        resid = ystar - mu[None, :]
        if kind is ModelKind.RISK_SHIFT:
            resid_delta = resid / (mu * (1.0 - mu))[None, :]
        else:
            resid_delta = resid
        incr = resid_delta @ Z_batch
        if self.corrected:
            incr = incr + self.theta_score_sum[surv] @ batch_weight.T
            self.theta_score_sum[surv] += resid @ Z_batch
        self.combined_prefix[surv] += incr

    def chart_stats(self, norm: str = "l1") -> np.ndarray:
        """Chart statistic of every surviving sequence at the current boundary."""
        surv = self.survivor_mask
        cur = self.combined_prefix[surv]
        snaps = np.stack(self.snapshots, axis=0)[:, surv, :]
        diff = cur[None, :, :] - snaps
        if norm == "l1":
            vals = np.abs(diff).sum(axis=2)
        else:
            vals = np.sqrt((diff * diff).sum(axis=2))
        return vals.max(axis=0)

    def snapshot(self) -> None:
        """Record the current prefix as a candidate-changepoint boundary."""
        self.snapshots.append(self.combined_prefix.copy())

    def update_control_limit(self, sf, t: int, m: int, norm: str = "l1"):
        """Place the control limit for evaluation time t and retire exceeders.

        Returns ``(h, stats_max)`` where ``h`` is the realized limit (+inf when
        the schedule eliminates nobody) and ``stats_max`` the largest surviving
        bootstrap statistic, kept for reporting.
        """
        v_prev = self.last_spend_v if self.last_spend_v is not None else 1.0
        v = min(t / m, sf.horizon_factor)
        increment = sf.cumulative(v) - sf.cumulative(max(v_prev, 1.0))
        self.last_spend_v = v
        raw = self.B * increment + self.carry
        n_t = int(round(raw))
        self.carry = raw - n_t
        self.spent_alpha = sf.cumulative(v)
        ids = self.survivors
        if ids.size == 0:
            raise SpendExhaustedError("no bootstrap sequences remain")
        stats = self.chart_stats(norm)
        if n_t < MIN_EXCEEDERS:
            self.b_adequacy_violations += 1
        if n_t <= 0:
            return math.inf, float(stats.max())
        if n_t > ids.size:
            raise SpendExhaustedError(
                f"schedule asks for {n_t} eliminations but only {ids.size} sequences remain"
            )
        order = np.lexsort((ids, -stats))  # by stat desc, ties by sequence id
        drop = ids[order[:n_t]]
        self.survivor_mask[drop] = False
        self.eliminated_total += n_t
        remaining = stats[order[n_t:]]
        h = float(remaining[0]) if remaining.size else -math.inf
        return h, h

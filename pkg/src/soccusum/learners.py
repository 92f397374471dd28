"""Risk-prediction learners that sit under the monitor.

All learners map a covariate row to a predicted event probability and consume
update-stream observations through ``observe``.  ``version`` increments
whenever the prediction function changes, so a stream generator knows when
cached predictions go stale.  ``pending_before_change()`` reports how many
more observations can arrive before the next possible change (None = never),
which lets callers batch safely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from . import estimation
from .models import clamp_prob


def _with_intercept(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.column_stack([X, np.ones(X.shape[0])])


def _safe_logistic_fit(X: np.ndarray, y: np.ndarray, lam: float, init=None) -> np.ndarray:
    """Logistic fit with intercept that stays defined on degenerate data."""
    Xi = _with_intercept(X)
    y = np.asarray(y, dtype=float)
    if np.all(y == y[0]):
        # single-class window: flat prediction at a smoothed base rate
        beta = np.zeros(Xi.shape[1])
        k = float(y.sum())
        beta[-1] = logit((k + 0.5) / (y.size + 1.0))
        return beta
    try:
        if lam > 0.0:
            return estimation.fit_ridge(Xi, y, lam, init=init)
        return estimation.fit(Xi, y, init=init).theta_hat
    except estimation.EstimationError:
        return estimation.fit_ridge(Xi, y, max(lam, 1.0), init=None)


class LockedLogistic:
    """Static logistic risk model; the prediction function never changes."""

    def __init__(self, beta: np.ndarray):
        self.beta = np.asarray(beta, dtype=float)
        self.version = 0

    def predict(self, X: np.ndarray) -> np.ndarray:
        return expit(_with_intercept(X) @ self.beta)

    def observe_many(self, X: np.ndarray, y: np.ndarray) -> None:
        pass

    def pending_before_change(self):
        return None


def train_locked(X: np.ndarray, y: np.ndarray) -> LockedLogistic:
    """Fit a locked logistic model on a pretraining set."""
    return LockedLogistic(_safe_logistic_fit(X, y, lam=0.0))


class OracleModel:
    """Prediction equal to a known generating risk function; for calibration
    experiments where the pre-change law must be matched exactly."""

    def __init__(self, beta_x: np.ndarray, intercept: float = 0.0):
        self.beta_x = np.asarray(beta_x, dtype=float)
        self.intercept = float(intercept)
        self.version = 0

    def predict(self, X: np.ndarray) -> np.ndarray:
        return expit(np.atleast_2d(X) @ self.beta_x + self.intercept)

    def observe_many(self, X, y) -> None:
        pass

    def pending_before_change(self):
        return None


class RidgeRetrainLearner:
    """Ridge-penalized logistic model refit on all accumulated data.

    The pretraining set stays in the refit window; the intercept is not
    penalized.  Refits every ``retrain_every`` observed update-stream rows.
    """

    def __init__(self, X0: np.ndarray, y0: np.ndarray, lam: float = 1.0,
                 retrain_every: int = 10):
        if retrain_every < 1:
            raise ValueError("retrain_every must be at least 1")
        self.lam = float(lam)
        self.retrain_every = int(retrain_every)
        self._X = [np.atleast_2d(np.asarray(X0, dtype=float))]
        self._y = [np.asarray(y0, dtype=float)]
        self._since_refit = 0
        self.version = 0
        self.beta = _safe_logistic_fit(X0, y0, lam=self.lam)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return expit(_with_intercept(X) @ self.beta)

    def observe_many(self, X: np.ndarray, y: np.ndarray) -> None:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if y.size == 0:
            return
        self._X.append(X)
        self._y.append(y)
        self._since_refit += y.size
        while self._since_refit >= self.retrain_every:
            self._since_refit -= self.retrain_every
            self._refit()

    def _refit(self) -> None:
        X = np.vstack(self._X)
        y = np.concatenate(self._y)
        self.beta = _safe_logistic_fit(X, y, lam=self.lam, init=self.beta)
        self.version += 1

    def pending_before_change(self):
        return self.retrain_every - self._since_refit


class EwafLearner:
    """Exponentially weighted average of window-refitted logistic experts.

    Experts are logistic fits on trailing windows of the update stream
    (window ``None`` = all data, pretraining included).  After every observed
    outcome each expert's weight is multiplied by exp(-eta * log-loss) and
    weights are renormalized, so the prediction function changes on every
    observation; experts themselves are refit every ``refit_every``
    observations.
    """

    def __init__(self, X0: np.ndarray, y0: np.ndarray,
                 windows: tuple = (25, 50, 100, None), eta: float = 0.5,
                 refit_every: int = 10):
        if eta <= 0:
            raise ValueError("eta must be positive")
        self.windows = tuple(windows)
        self.eta = float(eta)
        self.refit_every = int(refit_every)
        self._X = [np.atleast_2d(np.asarray(X0, dtype=float))]
        self._y = [np.asarray(y0, dtype=float)]
        self._since_refit = 0
        self.weights = np.full(len(self.windows), 1.0 / len(self.windows))
        self.version = 0
        self._betas = []
        self._refit_experts()

    def _stacked(self):
        return np.vstack(self._X), np.concatenate(self._y)

    def _refit_experts(self) -> None:
        X, y = self._stacked()
        self._betas = []
        for w in self.windows:
            Xw, yw = (X, y) if w is None else (X[-w:], y[-w:])
            self._betas.append(_safe_logistic_fit(Xw, yw, lam=0.0))
        self.version += 1

    def expert_predictions(self, X: np.ndarray) -> np.ndarray:
        Xi = _with_intercept(X)
        return expit(np.stack([Xi @ b for b in self._betas], axis=1))  # (n, experts)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.expert_predictions(X) @ self.weights

    def observe_many(self, X: np.ndarray, y: np.ndarray) -> None:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        for i in range(y.size):
            self._observe_one(X[i], y[i])

    def _observe_one(self, x: np.ndarray, y: float) -> None:
        p = clamp_prob(self.expert_predictions(x[None, :])[0])
        losses = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
        w = self.weights * np.exp(-self.eta * losses)
        self.weights = w / w.sum()
        self._X.append(x[None, :])
        self._y.append(np.array([y]))
        self._since_refit += 1
        self.version += 1
        if self._since_refit >= self.refit_every:
            self._since_refit = 0
            self._refit_experts()

    def pending_before_change(self):
        return 1


class PlattWrapped:
    """Recalibrates an inner learner's scores with a one-dimensional logistic
    map refit at a fixed cadence on the update stream."""

    def __init__(self, inner, refit_every: int = 10):
        self.inner = inner
        self.refit_every = int(refit_every)
        self._scores: list[float] = []
        self._ys: list[float] = []
        self._since_refit = 0
        self.a, self.b = 1.0, 0.0
        self.version = 0

    def predict(self, X: np.ndarray) -> np.ndarray:
        return platt_apply(self.a, self.b, self.inner.predict(X))

    def observe_many(self, X: np.ndarray, y: np.ndarray) -> None:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if y.size == 0:
            return
        inner_version = self.inner.version
        scores = self.inner.predict(X)
        self._scores.extend(scores.tolist())
        self._ys.extend(y.tolist())
        self.inner.observe_many(X, y)
        self._since_refit += y.size
        changed = self.inner.version != inner_version
        while self._since_refit >= self.refit_every:
            self._since_refit -= self.refit_every
            s = np.asarray(self._scores)
            yy = np.asarray(self._ys)
            if np.unique(yy).size == 2 and np.ptp(s) > 1e-9:
                self.a, self.b = platt_fit(s, yy)
            changed = True
        if changed:
            self.version += 1

    def pending_before_change(self):
        inner_pending = self.inner.pending_before_change()
        own = self.refit_every - self._since_refit
        if inner_pending is None:
            return own
        return min(own, inner_pending)


def platt_fit(scores: np.ndarray, outcomes: np.ndarray) -> tuple[float, float]:
    """Logistic recalibration of probability scores: slope and intercept of
    the fit of the outcome on the score's log-odds."""
    s = logit(clamp_prob(np.asarray(scores, dtype=float)))
    y = np.asarray(outcomes, dtype=float)
    beta = _safe_logistic_fit(s[:, None], y, lam=0.0)
    return float(beta[0]), float(beta[1])


def platt_apply(a: float, b: float, s) -> np.ndarray:
    """Apply a fitted recalibration map to scores."""
    return expit(a * logit(clamp_prob(np.asarray(s, dtype=float))) + b)


def threshold_classify(prob, cutoff: float = 0.7):
    """Hard classification: positive iff the predicted risk strictly exceeds
    the cutoff."""
    return (np.asarray(prob, dtype=float) > cutoff).astype(int)


@dataclass(frozen=True)
class LearnerPolicy:
    """Declarative learner choice for scenario configs."""

    kind: str  # locked | oracle | ridge | ewaf | platt-ridge
    lam: float = 1.0
    retrain_every: int = 10
    ewaf_eta: float = 0.5
    ewaf_windows: tuple = (25, 50, 100, None)

    def build(self, X0: np.ndarray, y0: np.ndarray, oracle_beta=None):
        if self.kind == "locked":
            return train_locked(X0, y0)
        if self.kind == "oracle":
            if oracle_beta is None:
                raise ValueError("oracle learner needs the generating coefficients")
            return OracleModel(oracle_beta[:-1], oracle_beta[-1])
        if self.kind == "ridge":
            return RidgeRetrainLearner(X0, y0, lam=self.lam, retrain_every=self.retrain_every)
        if self.kind == "ewaf":
            return EwafLearner(X0, y0, windows=self.ewaf_windows, eta=self.ewaf_eta,
                               refit_every=self.retrain_every)
        if self.kind == "platt-ridge":
            inner = RidgeRetrainLearner(X0, y0, lam=self.lam, retrain_every=self.retrain_every)
            return PlattWrapped(inner, refit_every=self.retrain_every)
        raise ValueError(f"unknown learner kind {self.kind!r}")

    @property
    def is_static(self) -> bool:
        return self.kind in ("locked", "oracle")

"""Conditional outcome models for binary events and their likelihood derivatives.

Two model families share a logistic pre-change distribution and differ in how a
structural change enters:

* ``logit-shift``: the shift adds to the linear predictor, so the post-change
  probability is ``sigmoid((theta + delta)' z)``.
* ``risk-shift``: the shift adds on the probability scale, so the post-change
  probability is ``clip(sigmoid(theta' z) + delta' z, 0, 1)``.

All derivative operations are evaluated at the null shift (delta = 0), where
the clip in the risk-shift model is inactive.  Functions accept a single
predictor vector ``(q,)`` or a batch ``(n, q)`` and broadcast accordingly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import expit

PROB_CLAMP = 1e-12


class DegenerateProbabilityError(ValueError):
    """A fitted probability is exactly 0 or 1, so a score is undefined."""


class ModelKind(str, Enum):
    LOGIT_SHIFT = "logit-shift"
    RISK_SHIFT = "risk-shift"


def _as_kind(kind: ModelKind | str) -> ModelKind:
    return ModelKind(kind)


@dataclass(frozen=True)
class ModelParams:
    """Pre-change parameter, shift parameter and the shift's scale.

    ``delta_index_map`` maps each delta coordinate to a predictor coordinate;
    by default delta is full length and aligned with theta.
    """

    theta: np.ndarray
    delta: np.ndarray
    kind: ModelKind
    delta_index_map: tuple[int, ...] | None = None

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        delta = np.asarray(self.delta, dtype=float)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "kind", _as_kind(self.kind))
        if not np.all(np.isfinite(theta)) or not np.all(np.isfinite(delta)):
            raise ValueError("model parameters must be finite")
        idx = self.delta_index_map
        if idx is None:
            if delta.shape[0] != theta.shape[0]:
                raise ValueError(
                    "delta shorter than theta requires an explicit delta_index_map"
                )
            idx = tuple(range(theta.shape[0]))
        else:
            idx = tuple(int(i) for i in idx)
            if len(idx) != delta.shape[0]:
                raise ValueError("delta_index_map length must match delta")
            if len(set(idx)) != len(idx):
                raise ValueError("delta_index_map must be injective")
            if any(i < 0 or i >= theta.shape[0] for i in idx):
                raise ValueError("delta_index_map indices out of range")
        object.__setattr__(self, "delta_index_map", idx)

    @property
    def q(self) -> int:
        return self.theta.shape[0]

    @property
    def d(self) -> int:
        return self.delta.shape[0]


@dataclass(frozen=True)
class Observation:
    """One monitored data point: predictor vector, binary outcome, time index."""

    z: np.ndarray
    y: int
    t: int

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        object.__setattr__(self, "z", z)
        if self.y not in (0, 1):
            raise ValueError("outcome must be 0 or 1")
        if self.t < 1:
            raise ValueError("time index must be a positive integer")
        if not np.all(np.isfinite(z)):
            raise ValueError("predictor vector must be finite")


def _check_z(z: np.ndarray, q: int) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != q:
        raise ValueError(f"predictor dimension {z.shape[-1]} != parameter dimension {q}")
    if not np.all(np.isfinite(z)):
        raise ValueError("predictor vector must be finite")
    return z


def predict_prob(params: ModelParams, z: np.ndarray, shifted: bool = False):
    """Outcome probability under the model, pre- or post-change."""
    z = _check_z(z, params.q)
    eta = z @ params.theta
    if params.kind is ModelKind.LOGIT_SHIFT:
        if shifted:
            z_d = z[..., list(params.delta_index_map)]
            eta = eta + z_d @ params.delta
        return expit(eta)
    p = expit(eta)
    if shifted:
        z_d = z[..., list(params.delta_index_map)]
        p = np.clip(p + z_d @ params.delta, 0.0, 1.0)
    return p


def clamp_prob(p):
    """Clamp probabilities away from 0/1; for log-likelihoods only, never scores."""
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def log_likelihood(params: ModelParams, z: np.ndarray, y, shifted: bool = False):
    """Bernoulli log-likelihood with clamped probabilities."""
    p = clamp_prob(predict_prob(params, z, shifted))
    y = np.asarray(y, dtype=float)
    return y * np.log(p) + (1.0 - y) * np.log1p(-p)


def _mu(theta: np.ndarray, z: np.ndarray):
    theta = np.asarray(theta, dtype=float)
    z = _check_z(z, theta.shape[0])
    return z, expit(z @ theta)


def score_theta(theta: np.ndarray, z: np.ndarray, y):
    """Gradient of the log-likelihood in theta at the null shift: (y - mu) z."""
    z, mu = _mu(theta, z)
    y = np.asarray(y, dtype=float)
    return (y - mu)[..., None] * z if z.ndim == 2 else (y - mu) * z


def score_delta(
    theta: np.ndarray,
    z: np.ndarray,
    y,
    kind: ModelKind | str,
    delta_index_map: tuple[int, ...] | None = None,
):
    """Gradient of the log-likelihood in delta at the null shift.

    Raises ``DegenerateProbabilityError`` when the fitted probability
    saturates to exactly 0 or 1 in floating point.
    """
    kind = _as_kind(kind)
    z, mu = _mu(theta, z)
    if np.any(mu <= 0.0) or np.any(mu >= 1.0):
        raise DegenerateProbabilityError("fitted probability saturated at 0 or 1")
    y = np.asarray(y, dtype=float)
    resid = y - mu
    if kind is ModelKind.RISK_SHIFT:
        resid = resid / (mu * (1.0 - mu))
    z_d = z if delta_index_map is None else z[..., list(delta_index_map)]
    return resid[..., None] * z_d if z.ndim == 2 else resid * z_d


def info_theta(theta: np.ndarray, z: np.ndarray):
    """Per-observation expected negative Hessian in theta: mu (1-mu) z z'."""
    z, mu = _mu(theta, z)
    if z.ndim == 2:
        return (mu * (1.0 - mu))[:, None, None] * (z[:, :, None] * z[:, None, :])
    return mu * (1.0 - mu) * np.outer(z, z)


def cross_info(
    theta: np.ndarray,
    z: np.ndarray,
    kind: ModelKind | str,
    delta_index_map: tuple[int, ...] | None = None,
):
    """Conditional expectation of the mixed theta/delta Hessian given z.

    Returns a ``(d, q)`` matrix (or ``(n, d, q)`` for a batch).  The outcome
    integrates out: for the logit-shift model the mixed Hessian is already
    deterministic given z; for the risk-shift model the residual term has zero
    conditional mean, leaving ``-z_d z'``.
    """
    kind = _as_kind(kind)
    z, mu = _mu(theta, z)
    if kind is ModelKind.RISK_SHIFT and (np.any(mu <= 0.0) or np.any(mu >= 1.0)):
        raise DegenerateProbabilityError("fitted probability saturated at 0 or 1")
    z_d = z if delta_index_map is None else z[..., list(delta_index_map)]
    if z.ndim == 2:
        outer = z_d[:, :, None] * z[:, None, :]
        if kind is ModelKind.LOGIT_SHIFT:
            return -(mu * (1.0 - mu))[:, None, None] * outer
        return -outer
    outer = np.outer(z_d, z)
    if kind is ModelKind.LOGIT_SHIFT:
        return -mu * (1.0 - mu) * outer
    return -outer

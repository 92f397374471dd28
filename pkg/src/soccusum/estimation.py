"""Sequential maximum-likelihood estimation of the pre-change logistic parameter.

The monitor refits the nuisance parameter on all accumulated data once per
batch, warm-started at the previous estimate, so the estimate used to score an
observation never saw that observation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

GRAD_TOL = 1e-8
MAX_ITER = 100
COND_LIMIT = 1e10
RIDGE_FALLBACK = 1e-6


class EstimationError(RuntimeError):
    """The maximum-likelihood fit failed to converge."""


class SeparabilityError(EstimationError):
    """The data admit no interior maximum (e.g. a single outcome class)."""


@dataclass(frozen=True)
class MleState:
    """Fitted parameter plus the accumulated data it was fitted on.

    ``max_index`` is the largest time index among the fitted observations;
    the monitor audits it to guarantee nonanticipative scoring.
    """

    theta_hat: np.ndarray
    z: np.ndarray
    y: np.ndarray
    last_gradient_norm: float
    converged: bool
    max_index: int = 0
    ridge_used: bool = False

    @property
    def n_obs(self) -> int:
        return self.y.shape[0]


def _neg_loglik(beta, Z, y, lam, penalty_mask):
    eta = Z @ beta
    # log(1 + exp(eta)) - y*eta, computed stably
    ll = np.sum(np.logaddexp(0.0, eta) - y * eta)
    return ll + 0.5 * lam * np.sum((beta * penalty_mask) ** 2)


def _newton_logistic(
    Z: np.ndarray,
    y: np.ndarray,
    init: np.ndarray,
    lam: float = 0.0,
    penalty_mask: np.ndarray | None = None,
    tol: float = GRAD_TOL,
    max_iter: int = MAX_ITER,
):
    """Newton-Raphson on the (optionally ridge-penalized) logistic likelihood.

    Returns (beta, grad_norm, converged, jittered).  ``penalty_mask`` selects
    which coordinates the ridge penalty applies to (all by default).
    """
    q = Z.shape[1]
    beta = np.array(init, dtype=float, copy=True)
    if penalty_mask is None:
        penalty_mask = np.ones(q)
    jittered = False
    f_cur = _neg_loglik(beta, Z, y, lam, penalty_mask)
    grad_norm = np.inf
    for _ in range(max_iter):
        mu = expit(Z @ beta)
        grad = Z.T @ (y - mu) - lam * (beta * penalty_mask)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm < tol:
            return beta, grad_norm, True, jittered
        w = mu * (1.0 - mu)
        hess = (Z * w[:, None]).T @ Z + lam * np.diag(penalty_mask)
        if np.linalg.cond(hess) > COND_LIMIT:
            hess = hess + RIDGE_FALLBACK * np.eye(q)
            jittered = True
        step = np.linalg.solve(hess, grad)
        # halve the step until the penalized deviance stops increasing
        scale = 1.0
        for _ in range(30):
            cand = beta + scale * step
            f_new = _neg_loglik(cand, Z, y, lam, penalty_mask)
            if f_new <= f_cur + 1e-12:
                beta, f_cur = cand, f_new
                break
            scale *= 0.5
        else:
            break
    mu = expit(Z @ beta)
    grad = Z.T @ (y - mu) - lam * (beta * penalty_mask)
    grad_norm = float(np.linalg.norm(grad))
    return beta, grad_norm, grad_norm < tol, jittered


def fit(
    Z: np.ndarray,
    y: np.ndarray,
    init: np.ndarray | None = None,
    max_index: int | None = None,
) -> MleState:
    """Fit the logistic MLE; falls back to a vanishing ridge when ill-posed.

    Raises ``SeparabilityError`` when only one outcome class is present and
    ``EstimationError`` when Newton fails even with the ridge fallback.
    """
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    if Z.ndim != 2 or Z.shape[0] != y.shape[0]:
        raise ValueError("Z must be (n, q) with one outcome per row")
    n, q = Z.shape
    if n < q:
        raise EstimationError(f"need at least {q} observations, got {n}")
    if np.all(y == 0) or np.all(y == 1):
        raise SeparabilityError("all outcomes identical; logistic MLE undefined")
    beta0 = np.zeros(q) if init is None else np.asarray(init, dtype=float)
    if not np.all(np.isfinite(beta0)):
        beta0 = np.zeros(q)
    beta, gnorm, ok, jittered = _newton_logistic(Z, y, beta0)
    ridge_used = False
    if not ok or not np.all(np.isfinite(beta)):
        start = np.clip(beta, -20.0, 20.0) if np.all(np.isfinite(beta)) else np.zeros(q)
        beta, gnorm, ok, _ = _newton_logistic(Z, y, start, lam=RIDGE_FALLBACK)
        ridge_used = True
        if not ok or not np.all(np.isfinite(beta)):
            raise EstimationError(
                f"Newton did not converge (gradient norm {gnorm:.3e}) even with ridge fallback"
            )
    if max_index is None:
        max_index = n
    return MleState(
        theta_hat=beta,
        z=Z,
        y=y,
        last_gradient_norm=gnorm,
        converged=True,
        max_index=int(max_index),
        ridge_used=ridge_used or jittered,
    )


def sequential_update(state: MleState, Z_new: np.ndarray, y_new: np.ndarray,
                      max_index: int | None = None) -> MleState:
    """Refit on all accumulated data, warm-started at the previous estimate."""
    Z_new = np.atleast_2d(np.asarray(Z_new, dtype=float))
    y_new = np.atleast_1d(np.asarray(y_new, dtype=float))
    if y_new.shape[0] == 0:
        return state if max_index is None else replace(state, max_index=int(max_index))
    Z = np.vstack([state.z, Z_new])
    y = np.concatenate([state.y, y_new])
    if max_index is None:
        max_index = state.max_index + y_new.shape[0]
    return fit(Z, y, init=state.theta_hat, max_index=max_index)


def fit_ridge(
    Z: np.ndarray,
    y: np.ndarray,
    lam: float,
    init: np.ndarray | None = None,
    penalize_intercept: bool = False,
) -> np.ndarray:
    """Ridge-penalized logistic fit for learners; the last column is the intercept."""
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    q = Z.shape[1]
    mask = np.ones(q)
    if not penalize_intercept:
        mask[-1] = 0.0
    beta0 = np.zeros(q) if init is None else np.asarray(init, dtype=float)
    if lam <= 0.0:
        return fit(Z, y, init=beta0).theta_hat
    beta, _, ok, _ = _newton_logistic(Z, y, beta0, lam=lam, penalty_mask=mask)
    if not ok:
        # ridge objective is strictly concave on the penalized coords; retry colder
        beta, _, ok, _ = _newton_logistic(Z, y, np.zeros(q), lam=max(lam, RIDGE_FALLBACK),
                                          penalty_mask=mask)
        if not ok:
            raise EstimationError("ridge logistic fit did not converge")
    return beta

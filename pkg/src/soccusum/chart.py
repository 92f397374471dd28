"""Score-based CUSUM chart statistic, in known-parameter and plugin variants.

The chart tracks partial sums of per-observation shift scores and takes the
maximum over candidate changepoints of the norm of the trailing sum.  In the
plugin variant each observation is scored at the estimate fitted on strictly
earlier data, which keeps the summands a martingale difference sequence.
"""

from __future__ import annotations

import numpy as np

from .estimation import MleState
from .models import ModelKind, Observation, score_delta

_NORMS = ("l1", "l2")


class ScorePrefix:
    """Cumulative sums of d-dimensional scores from ``start_index`` onward."""

    def __init__(self, start_index: int, dim: int):
        self.start_index = int(start_index)
        self.dim = int(dim)
        self._sums = np.zeros((0, dim))

    @property
    def count(self) -> int:
        return self._sums.shape[0]

    @property
    def prefix_sums(self) -> np.ndarray:
        return self._sums

    def copy(self) -> "ScorePrefix":
        out = ScorePrefix(self.start_index, self.dim)
        out._sums = self._sums.copy()
        return out


def append_score(prefix: ScorePrefix, s: np.ndarray) -> ScorePrefix:
    """Append the running sum for one more score; mutates and returns the prefix."""
    s = np.asarray(s, dtype=float)
    if s.shape != (prefix.dim,):
        raise ValueError(f"score must have shape ({prefix.dim},)")
    if not np.all(np.isfinite(s)):
        raise ValueError("score must be finite")
    last = prefix._sums[-1] if prefix.count else np.zeros(prefix.dim)
    prefix._sums = np.vstack([prefix._sums, last + s])
    return prefix


def _norm(diff: np.ndarray, norm: str) -> np.ndarray:
    if norm == "l1":
        return np.abs(diff).sum(axis=-1)
    if norm == "l2":
        return np.sqrt((diff * diff).sum(axis=-1))
    raise ValueError(f"norm must be one of {_NORMS}")


def cusum_stat(prefix: ScorePrefix, norm: str = "l1") -> float:
    """Max over candidate changepoints of the norm of the trailing score sum."""
    if prefix.count == 0:
        raise ValueError("empty score prefix")
    S = prefix.prefix_sums
    heads = np.vstack([np.zeros(prefix.dim), S[:-1]])
    return float(_norm(S[-1] - heads, norm).max())


def plugin_score(
    obs: Observation,
    mle_prev: MleState,
    kind: ModelKind | str,
    delta_index_map: tuple[int, ...] | None = None,
) -> np.ndarray:
    """Shift score at the estimate fitted on data strictly before ``obs.t``."""
    if mle_prev.max_index >= obs.t:
        raise ValueError(
            f"estimate saw index {mle_prev.max_index} >= scored index {obs.t}; "
            "plugin scoring must be nonanticipative"
        )
    return score_delta(mle_prev.theta_hat, obs.z, obs.y, kind, delta_index_map)


def known_score(
    obs: Observation,
    theta0: np.ndarray,
    kind: ModelKind | str,
    delta_index_map: tuple[int, ...] | None = None,
) -> np.ndarray:
    """Shift score at a known pre-change parameter."""
    return score_delta(np.asarray(theta0, dtype=float), obs.z, obs.y, kind, delta_index_map)

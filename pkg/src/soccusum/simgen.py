"""Synthetic patient streams with prediction-driven treatment assignment.

Patients arrive with covariates drawn uniformly on (-1, 1); a risk model
scores each arrival, a clinician model converts the score (and possibly
covariates and an unmeasured factor) into a treatment decision, and the
untreated-potential outcome is drawn from the configured model.  Only
untreated patients enter the monitored stream; treated patients' outcomes are
generated but withheld.

Randomness is split into independent substreams (pretraining, covariates,
treatment, outcomes, stream splitting), each consuming a fixed number of
draws per patient, so changing the treatment model never perturbs anyone's
covariates or outcome.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, logit

from .learners import LearnerPolicy
from .models import ModelKind, ModelParams, clamp_prob
from .monitor import SocStream

TREATMENT_FEATURES = ("pred+x+xt+u", "pred")
OUTCOME_COVARIATES = ("x+xt+u", "x")


class GenerationError(RuntimeError):
    """Stream generation could not satisfy the request."""


@dataclass(frozen=True)
class TreatmentModel:
    """Logistic treatment assignment; optionally the max of two decisions.

    Feature order for the coefficient vectors is
    ``[log-odds of the prediction, x_1..x_p', x_tilde, u, intercept]``
    (or ``[log-odds, intercept]`` when ``features="pred"``).
    """

    gammas: tuple
    features: str = "pred+x+xt+u"

    def __post_init__(self):
        gammas = tuple(np.asarray(g, dtype=float) for g in self.gammas)
        object.__setattr__(self, "gammas", gammas)
        if self.features not in TREATMENT_FEATURES:
            raise ValueError(f"features must be one of {TREATMENT_FEATURES}")
        if len(gammas) not in (1, 2):
            raise ValueError("treatment model takes one or two coefficient vectors")

    @property
    def n_draws(self) -> int:
        return len(self.gammas)

    def expected_len(self, p_prime: int) -> int:
        return 2 if self.features == "pred" else p_prime + 4

    def propensities(self, pred, x, x_tilde, u) -> list:
        """Per-decision treatment probabilities for a batch of patients."""
        s = logit(np.clip(np.asarray(pred, dtype=float), 1e-12, 1 - 1e-12))
        if self.features == "pred":
            feats = np.column_stack([s, np.ones(s.shape[0])])
        else:
            feats = np.column_stack([s, np.atleast_2d(x), x_tilde, u, np.ones(s.shape[0])])
        return [expit(feats @ g) for g in self.gammas]

    def draw(self, pred, x, x_tilde, u, uniforms: np.ndarray) -> np.ndarray:
        """Treatment indicator; with two decisions the final treatment is
        their maximum (treat whenever either says treat)."""
        props = self.propensities(pred, x, x_tilde, u)
        a = uniforms[:, 0] < props[0]
        if len(props) == 2:
            a = a | (uniforms[:, 1] < props[1])
        return a.astype(int)


@dataclass(frozen=True)
class ScheduleEntry:
    """A treatment model active from a given time onward.

    ``clock`` is "abs" (absolute patient time) or "soc" (count of monitored
    standard-of-care observations); ``at`` may be the string
    "half_soc_horizon", resolved against the run's monitored-stream target.
    """

    at: int | str
    model: TreatmentModel
    clock: str = "abs"

    def __post_init__(self):
        if self.clock not in ("abs", "soc"):
            raise ValueError("clock must be 'abs' or 'soc'")


@dataclass(frozen=True)
class ScenarioConfig:
    """Full generative specification of one simulation scenario."""

    name: str
    p_prime: int
    outcome_kind: ModelKind
    theta: np.ndarray
    delta: np.ndarray | None
    kappa_abs: int | None
    treatment_schedule: tuple
    learner: LearnerPolicy = LearnerPolicy(kind="locked")
    pretrain_n: int = 200
    monitor_fraction: float = 1.0
    outcome_covariates: str = "x+xt+u"
    horizon_abs: int | None = None
    monitor_kind: ModelKind = ModelKind.LOGIT_SHIFT
    conditioning: str = "pred"
    theta0_known: tuple | None = None
    naive_cutoff: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))
        if self.delta is not None:
            object.__setattr__(self, "delta", np.asarray(self.delta, dtype=float))
        object.__setattr__(self, "outcome_kind", ModelKind(self.outcome_kind))
        object.__setattr__(self, "monitor_kind", ModelKind(self.monitor_kind))
        object.__setattr__(self, "treatment_schedule", tuple(self.treatment_schedule))
        if self.outcome_covariates not in OUTCOME_COVARIATES:
            raise ValueError(f"outcome_covariates must be one of {OUTCOME_COVARIATES}")
        want = self.p_prime + (3 if self.outcome_covariates == "x+xt+u" else 1)
        if self.theta.shape[0] != want:
            raise ValueError(f"theta must have length {want} for p'={self.p_prime}")
        if self.delta is not None and self.delta.shape[0] != want:
            raise ValueError(f"delta must have length {want}")
        if (self.delta is None) != (self.kappa_abs is None):
            raise ValueError("delta and kappa must be supplied together")
        if not self.treatment_schedule:
            raise ValueError("need at least one treatment model")
        if self.treatment_schedule[0].at not in (0, 1):
            raise ValueError("first schedule entry must start at time 0/1")
        draws = {e.model.n_draws for e in self.treatment_schedule}
        if len(draws) != 1:
            raise ValueError("all schedule entries must share the treatment-model form")
        numeric = [e.at for e in self.treatment_schedule if isinstance(e.at, int)]
        if any(b <= a for a, b in zip(numeric, numeric[1:])):
            raise ValueError("schedule start times must be strictly increasing")
        for e in self.treatment_schedule:
            if e.model.expected_len(self.p_prime) != e.model.gammas[0].shape[0]:
                raise ValueError(
                    f"treatment coefficients must have length "
                    f"{e.model.expected_len(self.p_prime)}"
                )

    @property
    def outcome_params(self) -> ModelParams:
        q = self.theta.shape[0]
        delta = self.delta if self.delta is not None else np.zeros(q)
        return ModelParams(theta=self.theta, delta=delta, kind=self.outcome_kind)


@dataclass(frozen=True)
class PatientRecord:
    """One simulated arrival."""

    t: int
    x: np.ndarray
    x_tilde: float
    u: float
    prediction: float
    a: int
    y: int


@dataclass
class RawStream:
    """Columnar record of every simulated arrival, treated or not."""

    t: np.ndarray
    x: np.ndarray
    x_tilde: np.ndarray
    u: np.ndarray
    prediction: np.ndarray
    a: np.ndarray
    y: np.ndarray
    soc_index: np.ndarray  # 1-based among untreated arrivals; 0 for treated

    def __len__(self) -> int:
        return self.t.shape[0]


@dataclass
class SimulatedRun:
    """A generated stream plus the pieces a monitoring experiment needs."""

    scenario: ScenarioConfig
    raw: RawStream
    monitor_stream: SocStream
    kappa_abs: int | None
    kappa_monitor_soc: int | None
    n_update: int
    learner: object


def _outcome_z(cfg: ScenarioConfig, x: np.ndarray, x_tilde, u) -> np.ndarray:
    x = np.atleast_2d(x)
    ones = np.ones(x.shape[0])
    if cfg.outcome_covariates == "x+xt+u":
        return np.column_stack([x, x_tilde, u, ones])
    return np.column_stack([x, ones])


def outcome_probability(cfg: ScenarioConfig, x, x_tilde, u, t) -> np.ndarray:
    """Probability of the untreated outcome at absolute time(s) t."""
    from .models import predict_prob

    Z = _outcome_z(cfg, x, x_tilde, u)
    params = cfg.outcome_params
    p = predict_prob(params, Z, shifted=False)
    if cfg.kappa_abs is not None:
        shifted = np.asarray(t) >= cfg.kappa_abs
        if np.any(shifted):
            p_post = predict_prob(params, Z, shifted=True)
            p = np.where(shifted, p_post, p)
    return p


def active_model_at(cfg: ScenarioConfig, t_abs: int) -> TreatmentModel:
    """Treatment model active at an absolute time, ignoring count-based
    switches (which only the bulk generator can resolve)."""
    active = cfg.treatment_schedule[0].model
    for e in cfg.treatment_schedule[1:]:
        if e.clock == "abs" and isinstance(e.at, int) and t_abs >= e.at:
            active = e.model
    return active


def gen_patient(cfg: ScenarioConfig, t: int, model_prediction: float,
                rng: np.random.Generator) -> PatientRecord:
    """Draw one patient: covariates, treatment decision, untreated outcome.

    Draw order per patient is fixed (covariates, treatment, outcome) so a
    record is reproducible from the generator state.
    """
    x = rng.uniform(-1.0, 1.0, cfg.p_prime)
    x_tilde = rng.uniform(-1.0, 1.0)
    u = rng.uniform(-1.0, 1.0)
    model = active_model_at(cfg, t)
    tu = rng.random(model.n_draws)
    a = model.draw(
        np.array([model_prediction]), x[None, :], np.array([x_tilde]),
        np.array([u]), tu[None, :],
    )[0]
    p = outcome_probability(cfg, x[None, :], np.array([x_tilde]), np.array([u]),
                            np.array([t]))[0]
    y = int(rng.random() < p)
    return PatientRecord(t=t, x=x, x_tilde=float(x_tilde), u=float(u),
                         prediction=float(model_prediction), a=int(a), y=y)


def soc_filter(raw: RawStream) -> SocStream:
    """Untreated subsequence in arrival order, reindexed 1..N."""
    mask = raw.a == 0
    idx = np.flatnonzero(mask)
    return SocStream(
        soc_index=np.arange(1, idx.size + 1),
        t_abs=raw.t[idx],
        prediction=raw.prediction[idx],
        x_tilde=raw.x_tilde[idx],
        y=raw.y[idx],
    )


class _SplitBits:
    """Monitor-side membership bits for standard-of-care indices 1, 2, ...

    Bits depend only on (seed, index); they are drawn lazily in blocks so the
    same assignment is reproduced whether consumed during generation or when
    re-splitting a recorded stream.
    """

    def __init__(self, seed_seq, fraction: float):
        self.fraction = float(fraction)
        self._rng = np.random.default_rng(seed_seq)
        self._bits = np.zeros(0, dtype=bool)

    def upto(self, n: int) -> np.ndarray:
        if self.fraction >= 1.0:
            return np.ones(n, dtype=bool)
        while self._bits.size < n:
            grow = max(256, n - self._bits.size)
            self._bits = np.concatenate(
                [self._bits, self._rng.random(grow) < self.fraction]
            )
        return self._bits[:n]


def data_substreams(seed) -> dict:
    """Named child seed sequences for one simulated run."""
    root = np.random.SeedSequence(seed)
    pre, cov, treat, out, split = root.spawn(5)
    return {"pretrain": pre, "covariates": cov, "treatment": treat,
            "outcome": out, "split": split}


def _pretrain_learner(cfg: ScenarioConfig, ss) -> object:
    rng = np.random.default_rng(ss)
    n = cfg.pretrain_n
    X = rng.uniform(-1.0, 1.0, (n, cfg.p_prime))
    x_tilde = rng.uniform(-1.0, 1.0, n)
    u = rng.uniform(-1.0, 1.0, n)
    p = outcome_probability(cfg, X, x_tilde, u, np.zeros(n, dtype=int))
    y = (rng.random(n) < p).astype(float)
    oracle_beta = None
    if cfg.learner.kind == "oracle":
        tail = 3 if cfg.outcome_covariates == "x+xt+u" else 1
        extra = cfg.theta[cfg.p_prime:-1]
        if tail > 1 and np.any(extra != 0.0):
            raise ValueError("oracle learner requires an x-only outcome model")
        oracle_beta = np.concatenate([cfg.theta[: cfg.p_prime], cfg.theta[-1:]])
    return cfg.learner.build(X, y, oracle_beta=oracle_beta)


def simulate_run(
    cfg: ScenarioConfig,
    soc_target: int,
    seed,
    monitor_fraction: float | None = None,
    abs_limit: int | None = None,
    chunk: int = 256,
) -> SimulatedRun:
    """Generate a stream until the monitored side holds ``soc_target``
    observations (or ``abs_limit`` arrivals when given).

    The monitored side receives each untreated patient independently with
    probability ``monitor_fraction``; the rest feed the learner.
    """
    frac = cfg.monitor_fraction if monitor_fraction is None else monitor_fraction
    if not 0.0 < frac <= 1.0:
        raise ValueError("monitor fraction must lie in (0, 1]")
    streams = data_substreams(seed)
    learner = _pretrain_learner(cfg, streams["pretrain"])
    rng_cov = np.random.default_rng(streams["covariates"])
    rng_treat = np.random.default_rng(streams["treatment"])
    rng_out = np.random.default_rng(streams["outcome"])
    split = _SplitBits(streams["split"], frac)

    horizon = abs_limit
    if horizon is None:
        horizon = cfg.horizon_abs if cfg.horizon_abs is not None else max(
            20_000, 80 * soc_target
        )
    n_draws = cfg.treatment_schedule[0].model.n_draws
    sched = list(cfg.treatment_schedule)
    next_entry = 1
    active = sched[0].model
    p_pp = cfg.p_prime

    parts: list[dict] = []
    t_next = 1
    soc_total = 0
    mon_count = 0
    upd_count = 0
    target = None if soc_target is None else int(soc_target)

    dynamic = not cfg.learner.is_static
    lookahead = 16 if dynamic else chunk

    while t_next <= horizon and (target is None or mon_count < target):
        n = min(chunk, horizon - t_next + 1)
        # never let an absolute-clock switch fall inside a chunk
        if next_entry < len(sched) and sched[next_entry].clock == "abs":
            gap = int(sched[next_entry].at) - t_next
            if gap == 0:
                active = sched[next_entry].model
                next_entry += 1
                continue
            if 0 < gap < n:
                n = gap
        t_arr = np.arange(t_next, t_next + n)
        cov = rng_cov.random((n, p_pp + 2)) * 2.0 - 1.0
        x, x_tilde, u = cov[:, :p_pp], cov[:, p_pp], cov[:, p_pp + 1]
        tu = rng_treat.random((n, n_draws))
        ou = rng_out.random(n)
        p_y = outcome_probability(cfg, x, x_tilde, u, t_arr)
        y = (ou < p_y).astype(int)

        pos = 0
        stop_all = False
        while pos < n:
            seg_end = min(n, pos + lookahead)
            preds = learner.predict(x[pos:seg_end])
            a = active.draw(preds, x[pos:seg_end], x_tilde[pos:seg_end],
                            u[pos:seg_end], tu[pos:seg_end])
            soc = a == 0
            n_soc_seg = int(soc.sum())
            bits_global = split.upto(soc_total + n_soc_seg)
            seg_bits = bits_global[soc_total:soc_total + n_soc_seg]
            mon_flag = np.zeros(soc.shape[0], dtype=bool)
            mon_flag[soc] = seg_bits
            upd_flag = soc & ~mon_flag
            mon_cum = np.cumsum(mon_flag)
            upd_cum = np.cumsum(upd_flag)

            commit = soc.shape[0]
            target_cut = None
            if target is not None:
                hit = int(np.searchsorted(mon_cum, target - mon_count))
                if hit < commit:
                    target_cut = hit + 1
                    commit = min(commit, target_cut)
            if next_entry < len(sched) and sched[next_entry].clock == "soc":
                thresh = int(sched[next_entry].at) - mon_count
                if thresh <= 0:
                    active = sched[next_entry].model
                    next_entry += 1
                    continue
                hit = int(np.searchsorted(mon_cum, thresh))
                commit = min(commit, hit + 1)
            pending = learner.pending_before_change()
            if pending is not None and upd_cum[-1] >= pending:
                hit = int(np.searchsorted(upd_cum, pending))
                commit = min(commit, hit + 1)
            stop_all = target_cut is not None and commit == target_cut

            sl = slice(pos, pos + commit)
            seg = slice(0, commit)
            soc_c = soc[seg]
            n_soc_c = int(soc_c.sum())
            soc_idx = np.zeros(commit, dtype=int)
            soc_idx[soc_c] = soc_total + 1 + np.arange(n_soc_c)
            parts.append({
                "t": t_arr[sl], "x": x[sl], "x_tilde": x_tilde[sl], "u": u[sl],
                "prediction": preds[seg], "a": a[seg], "y": y[sl],
                "soc_index": soc_idx, "monitor": mon_flag[seg],
            })
            soc_total += n_soc_c
            mon_count += int(mon_flag[seg].sum())
            upd_sel = upd_flag[seg]
            if upd_sel.any():
                upd_count += int(upd_sel.sum())
                learner.observe_many(x[sl][upd_sel], y[sl][upd_sel])
            if next_entry < len(sched) and sched[next_entry].clock == "soc" \
                    and mon_count >= int(sched[next_entry].at):
                active = sched[next_entry].model
                next_entry += 1
            pos += commit
            if stop_all:
                break
        t_next += n
        if stop_all:
            break

    raw = RawStream(
        t=np.concatenate([p["t"] for p in parts]) if parts else np.zeros(0, dtype=int),
        x=np.vstack([p["x"] for p in parts]) if parts else np.zeros((0, p_pp)),
        x_tilde=np.concatenate([p["x_tilde"] for p in parts]) if parts else np.zeros(0),
        u=np.concatenate([p["u"] for p in parts]) if parts else np.zeros(0),
        prediction=np.concatenate([p["prediction"] for p in parts]) if parts else np.zeros(0),
        a=np.concatenate([p["a"] for p in parts]) if parts else np.zeros(0, dtype=int),
        y=np.concatenate([p["y"] for p in parts]) if parts else np.zeros(0, dtype=int),
        soc_index=np.concatenate([p["soc_index"] for p in parts]) if parts else np.zeros(0, dtype=int),
    )
    monitor_mask = (np.concatenate([p["monitor"] for p in parts])
                    if parts else np.zeros(0, dtype=bool))
    mon_rows = np.flatnonzero(monitor_mask)
    monitor_stream = SocStream(
        soc_index=np.arange(1, mon_rows.size + 1),
        t_abs=raw.t[mon_rows],
        prediction=raw.prediction[mon_rows],
        x_tilde=raw.x_tilde[mon_rows],
        y=raw.y[mon_rows],
    )
    kappa_soc = None
    if cfg.kappa_abs is not None and mon_rows.size:
        post = np.flatnonzero(monitor_stream.t_abs >= cfg.kappa_abs)
        kappa_soc = int(post[0] + 1) if post.size else None
    return SimulatedRun(
        scenario=cfg,
        raw=raw,
        monitor_stream=monitor_stream,
        kappa_abs=cfg.kappa_abs,
        kappa_monitor_soc=kappa_soc,
        n_update=upd_count,
        learner=learner,
    )


# --------------------------------------------------------------------------
# scenario catalog
# --------------------------------------------------------------------------

def _vec(*chunks) -> np.ndarray:
    out = []
    for c in chunks:
        if isinstance(c, tuple) and len(c) == 2 and c[0] == "zeros":
            out.extend([0.0] * c[1])
        elif np.isscalar(c):
            out.append(float(c))
        else:
            out.extend(float(v) for v in c)
    return np.asarray(out)


def _single(gamma, features="pred+x+xt+u") -> TreatmentModel:
    return TreatmentModel(gammas=(np.asarray(gamma, float),), features=features)


def _max2(g1, g2) -> TreatmentModel:
    return TreatmentModel(gammas=(np.asarray(g1, float), np.asarray(g2, float)))


_TRUST_GAMMAS = {
    "none": 0.01,
    "calibrated": 1.0,
    "over": 5.0,
}

CATALOG_NAMES = (
    "ce_pred", "ce_pred_xtilde", "tc_pred", "tc_pred_xtilde",
    "retrain_null_highdim", "big_shift", "small_shift",
    "trust_none", "trust_calibrated", "trust_over",
    "symmetric_shift", "highrisk_shift", "tc_violation", "naive_baseline",
)


def scenario_catalog(
    name: str,
    learner: str | None = None,
    trust: str | None = None,
    violation_time: int | None = 100,
    pretrain_n: int | None = None,
) -> ScenarioConfig:
    """Parameterizations for every study scenario.

    Options: ``learner`` overrides the learner policy ("locked", "ridge",
    "ewaf", "platt-ridge", "oracle"); ``trust`` picks the clinician arm for
    the shift scenarios ("none", "calibrated", "over"); ``violation_time``
    sets when (absolute time) the tc_violation propensity switch happens,
    None for no violation.
    """
    if name not in CATALOG_NAMES:
        raise KeyError(f"unknown scenario {name!r}; known: {', '.join(CATALOG_NAMES)}")
    z8 = ("zeros", 8)
    half = "half_soc_horizon"

    if name == "ce_pred":
        cfg = ScenarioConfig(
            name=name, p_prime=8, outcome_kind=ModelKind.LOGIT_SHIFT,
            theta=_vec(2, 1, 1, 1, ("zeros", 4), 0, 0, 0), delta=None, kappa_abs=None,
            treatment_schedule=(
                ScheduleEntry(0, _single(_vec(0.3, z8, 0, 0, 0))),
                ScheduleEntry(half, _single(_vec(0.6, z8, 0, 0, 0)), clock="soc"),
            ),
            monitor_kind=ModelKind.LOGIT_SHIFT, conditioning="pred",
            theta0_known=(1.0, 0.0),
        )
    elif name == "ce_pred_xtilde":
        cfg = ScenarioConfig(
            name=name, p_prime=8, outcome_kind=ModelKind.LOGIT_SHIFT,
            theta=_vec(2, 1, 1, 1, ("zeros", 4), 1, 0, 0), delta=None, kappa_abs=None,
            treatment_schedule=(
                ScheduleEntry(0, _single(_vec(0.3, z8, 0.1, 0, 0))),
                ScheduleEntry(half, _single(_vec(0.6, z8, 0.2, 0, 0)), clock="soc"),
            ),
            monitor_kind=ModelKind.LOGIT_SHIFT, conditioning="pred+xt",
        )
    elif name == "tc_pred":
        cfg = ScenarioConfig(
            name=name, p_prime=8, outcome_kind=ModelKind.RISK_SHIFT,
            theta=_vec(2, 1, 1, 1, ("zeros", 4), 0, 1, 0), delta=None, kappa_abs=None,
            treatment_schedule=(
                ScheduleEntry(0, _max2(_vec(0, z8, 0, 1, -2), _vec(0.2, z8, 0, 0, 0))),
                ScheduleEntry(half, _max2(_vec(0, z8, 0, 1, -2), _vec(0.4, z8, 0, 0, 0)),
                              clock="soc"),
            ),
            monitor_kind=ModelKind.RISK_SHIFT, conditioning="pred",
        )
    elif name == "tc_pred_xtilde":
        cfg = ScenarioConfig(
            name=name, p_prime=8, outcome_kind=ModelKind.RISK_SHIFT,
            theta=_vec(2, 1, 1, 1, ("zeros", 4), 1, 1, 0), delta=None, kappa_abs=None,
            treatment_schedule=(
                ScheduleEntry(0, _max2(_vec(0, z8, 0, 1, -2), _vec(0.2, z8, 0.3, 0, 0))),
                ScheduleEntry(half, _max2(_vec(0, z8, 0, 1, -2), _vec(0.4, z8, 0.6, 0, 0)),
                              clock="soc"),
            ),
            monitor_kind=ModelKind.RISK_SHIFT, conditioning="pred+xt",
        )
    elif name == "retrain_null_highdim":
        cfg = ScenarioConfig(
            name=name, p_prime=50, outcome_kind=ModelKind.LOGIT_SHIFT,
            theta=_vec(2, 1, 1, ("zeros", 47), 0, 0, 0), delta=None, kappa_abs=None,
            treatment_schedule=(
                ScheduleEntry(0, _single(_vec(0.5, ("zeros", 50), 0, 0, 0))),
            ),
            learner=LearnerPolicy(kind="ridge", lam=1.0, retrain_every=10),
            monitor_fraction=0.6,
            monitor_kind=ModelKind.RISK_SHIFT, conditioning="pred",
        )
    elif name in ("big_shift", "small_shift"):
        delta = (_vec(-1.6, -0.8, -0.8, -0.8, ("zeros", 4), 0, 0, 0)
                 if name == "big_shift"
                 else _vec(-1, -0.5, -0.5, -0.5, ("zeros", 4), 0, 0, 0))
        cfg = ScenarioConfig(
            name=name, p_prime=8, outcome_kind=ModelKind.LOGIT_SHIFT,
            theta=_vec(2, 1, 1, 1, ("zeros", 4), 0, 0, 0), delta=delta, kappa_abs=50,
            treatment_schedule=(
                ScheduleEntry(0, _single(_vec(0.15, z8, 0, 0, 0))),
            ),
            monitor_fraction=0.6,
            monitor_kind=ModelKind.LOGIT_SHIFT, conditioning="pred",
        )
    elif name in ("symmetric_shift", "highrisk_shift", "trust_none",
                  "trust_calibrated", "trust_over"):
        if name.startswith("trust_"):
            trust = name.removeprefix("trust_")
            shift = "highrisk"
        else:
            shift = name.removesuffix("_shift")
            trust = trust or "none"
        if trust not in _TRUST_GAMMAS:
            raise KeyError(f"unknown trust arm {trust!r}")
        delta = (_vec(-1, -0.5, -0.5, -0.5, ("zeros", 4), 0, 0, 0)
                 if shift == "symmetric"
                 else _vec(-1, -0.5, -0.5, -0.5, ("zeros", 4), 0, 0, -0.75))
        cfg = ScenarioConfig(
            name=f"{shift}_shift/trust_{trust}", p_prime=8,
            outcome_kind=ModelKind.LOGIT_SHIFT,
            theta=_vec(2, 1, 1, 1, ("zeros", 4), 0, 0, 0), delta=delta, kappa_abs=50,
            treatment_schedule=(
                ScheduleEntry(0, _single(_vec(_TRUST_GAMMAS[trust], z8, 0, 0, 0))),
            ),
            monitor_kind=ModelKind.LOGIT_SHIFT, conditioning="pred",
        )
    elif name == "tc_violation":
        base = _vec(0, z8, 0, 1, -1)
        schedule = [ScheduleEntry(0, _max2(base, _vec(0.8, z8, 0, 0, 0)))]
        if violation_time is not None:
            schedule.append(ScheduleEntry(
                int(violation_time),
                _max2(_vec(-0.5, z8, 0, 1, -1), _vec(0.8, z8, 0, 0, 0)),
            ))
        cfg = ScenarioConfig(
            name=(f"tc_violation@{violation_time}" if violation_time is not None
                  else "tc_violation@none"),
            p_prime=8, outcome_kind=ModelKind.RISK_SHIFT,
            theta=_vec(2, 1, 1, 1, ("zeros", 4), 0, 1, 0),
            delta=_vec(-0.1, -0.02, ("zeros", 6), 0, 0, 0), kappa_abs=100,
            treatment_schedule=tuple(schedule),
            monitor_kind=ModelKind.RISK_SHIFT, conditioning="pred",
        )
    elif name == "naive_baseline":
        cfg = ScenarioConfig(
            name=name, p_prime=8, outcome_kind=ModelKind.LOGIT_SHIFT,
            theta=_vec(2, 1, 1, 1, ("zeros", 4), 0), delta=None, kappa_abs=None,
            treatment_schedule=(
                ScheduleEntry(0, _single((1.0, -0.5), features="pred")),
                ScheduleEntry(200, _single((5.0, -2.5), features="pred")),
            ),
            outcome_covariates="x",
            monitor_kind=ModelKind.LOGIT_SHIFT, conditioning="pred",
            naive_cutoff=0.7,
        )
    else:  # pragma: no cover
        raise KeyError(name)

    if learner is not None:
        cfg = replace(cfg, learner=LearnerPolicy(
            kind=learner,
            lam=cfg.learner.lam,
            retrain_every=cfg.learner.retrain_every,
        ))
    if pretrain_n is not None:
        cfg = replace(cfg, pretrain_n=int(pretrain_n))
    return cfg


def parse_scenario_spec(spec: str) -> ScenarioConfig:
    """CLI-facing parser: ``name[:option]`` where the option is a learner
    ("big_shift:ewaf"), a trust arm ("symmetric_shift:over"), or a violation
    time ("tc_violation:300", "tc_violation:none")."""
    name, _, opt = spec.partition(":")
    kwargs: dict = {}
    if opt:
        if name == "tc_violation":
            kwargs["violation_time"] = None if opt == "none" else int(opt)
        elif opt in _TRUST_GAMMAS:
            kwargs["trust"] = opt
        else:
            kwargs["learner"] = opt
    return scenario_catalog(name, **kwargs)


def resolve_schedule(cfg: ScenarioConfig, soc_horizon: int) -> ScenarioConfig:
    """Replace symbolic schedule times with concrete counts."""
    entries = []
    for e in cfg.treatment_schedule:
        if e.at == "half_soc_horizon":
            entries.append(ScheduleEntry(int(soc_horizon // 2), e.model, clock=e.clock))
        else:
            entries.append(e)
    return replace(cfg, treatment_schedule=tuple(entries))


# --------------------------------------------------------------------------
# stream serialization
# --------------------------------------------------------------------------

def stream_header(p_prime: int, emit_confounder: bool) -> list[str]:
    cols = ["t", "soc_index", "prediction", "x_tilde", "a", "y"]
    cols += [f"x_{i}" for i in range(1, p_prime + 1)]
    if emit_confounder:
        cols.append("u")
    return cols


def write_stream_csv(raw: RawStream, fh: io.TextIOBase, emit_confounder: bool = False) -> None:
    """Write the arrival-level stream; the unmeasured factor only on request."""
    p_prime = raw.x.shape[1]
    w = csv.writer(fh)
    w.writerow(stream_header(p_prime, emit_confounder))
    for i in range(len(raw)):
        row = [int(raw.t[i]), int(raw.soc_index[i]),
               f"{raw.prediction[i]:.10g}", f"{raw.x_tilde[i]:.10g}",
               int(raw.a[i]), int(raw.y[i])]
        row += [f"{v:.10g}" for v in raw.x[i]]
        if emit_confounder:
            row.append(f"{raw.u[i]:.10g}")
        w.writerow(row)


def read_stream_csv(fh: io.TextIOBase) -> RawStream:
    """Parse a stream file back into columns; malformed rows report their
    line number."""
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise GenerationError("stream file is empty") from None
    base = ["t", "soc_index", "prediction", "x_tilde", "a", "y"]
    if header[: len(base)] != base:
        raise GenerationError(f"unexpected stream header: {header[:6]}")
    x_cols = [c for c in header if c.startswith("x_") and c != "x_tilde"]
    has_u = "u" in header
    p_prime = len(x_cols)
    rows_t, rows_soc, rows_pred, rows_xt, rows_a, rows_y = [], [], [], [], [], []
    rows_x, rows_u = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            rows_t.append(int(row[0]))
            rows_soc.append(int(row[1]))
            rows_pred.append(float(row[2]))
            rows_xt.append(float(row[3]))
            rows_a.append(int(row[4]))
            rows_y.append(int(row[5]))
            rows_x.append([float(v) for v in row[6:6 + p_prime]])
            rows_u.append(float(row[6 + p_prime]) if has_u else np.nan)
        except (ValueError, IndexError) as exc:
            raise GenerationError(f"malformed stream row at line {lineno}: {exc}") from None
    return RawStream(
        t=np.asarray(rows_t, dtype=int),
        x=np.asarray(rows_x, dtype=float).reshape(len(rows_t), p_prime),
        x_tilde=np.asarray(rows_xt, dtype=float),
        u=np.asarray(rows_u, dtype=float),
        prediction=np.asarray(rows_pred, dtype=float),
        a=np.asarray(rows_a, dtype=int),
        y=np.asarray(rows_y, dtype=int),
        soc_index=np.asarray(rows_soc, dtype=int),
    )

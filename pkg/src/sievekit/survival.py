"""Discrete-time competing-risks estimation.

Hazards and cumulative incidences are computed on the visit grid.  The
time-to-event contrasts are built from them, either nonparametrically or
through cause-specific Cox models with Breslow handling of ties.

Risk-set conventions: a subject with ``time = k`` is at risk at interval k.
For the nonparametric hazards every such subject counts, whatever happened
to them at k.  For a cause-specific Cox fit, subjects whose *competing*
event falls at k are removed from the risk set at the start of interval k;
drop-outs at k stay in it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import EventData
from .errors import (
    ConfigurationError,
    CoxNoConverge,
    DegenerateCounts,
    DegenerateIncidence,
    RiskSetExhausted,
    SeparationError,
)
from .estimands import RatioEstimate

TTE_ASSUMPTIONS = ["S1-TTE-randomization", "S2-TTE-exposure-necessity", "S3-TTE-no-cross-infectivity",
                   "S4-exposure-ratio-of-exposed", "S5-scaled-new-infection"]


@dataclass(frozen=True, eq=False)
class EventTally:
    """Weighted counts on the grid: ``events[j-1, k-1, a]``, ``at_risk[k-1, a]``."""

    events: np.ndarray
    at_risk: np.ndarray
    censored: np.ndarray

    @property
    def K(self) -> int:
        return self.at_risk.shape[0]


def tally(events: EventData, horizon: int | None = None) -> EventTally:
    K = int(horizon or events.horizon or 0)
    if K < 1:
        raise ConfigurationError("time-to-event data needs a horizon K >= 1")
    if len(events) and int(events.time.max()) > K:
        raise ConfigurationError(f"event time beyond horizon {K}")
    t = events.time.astype(np.int64) - 1
    a = events.a.astype(np.int64)
    ev = events.event.astype(np.int64)
    w = events.weight
    cube = np.bincount((ev * K + t) * 2 + a, weights=w, minlength=3 * K * 2).reshape(3, K, 2)
    leaving = cube.sum(axis=0)
    at_risk = leaving[::-1].cumsum(axis=0)[::-1]
    return EventTally(events=cube[1:].round(), at_risk=at_risk.round(), censored=cube[0].round())


@dataclass(frozen=True, eq=False)
class HazardTable:
    """``hazard[j-1, k-1, a]`` for causes j = 1, 2 on intervals k = 1..K."""

    hazard: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray

    @property
    def K(self) -> int:
        return self.hazard.shape[1]

    @property
    def h0(self) -> np.ndarray:
        """Probability of staying event-free through each interval, shape (K, 2)."""
        return 1.0 - self.hazard[0] - self.hazard[1]

    def h(self, j: int, k: int, a: int) -> float:
        return float(self.hazard[j - 1, k - 1, a])

    @classmethod
    def from_hazards(cls, h1, h2, at_risk=None) -> "HazardTable":
        """Build a table from hazard arrays of shape (K, 2) (columns: arm 0, arm 1)."""
        h = np.stack([np.asarray(h1, float), np.asarray(h2, float)])
        if h.ndim != 3 or h.shape[2] != 2:
            raise ConfigurationError("hazards must have shape (K, 2)")
        if (h < 0).any() or (h.sum(axis=0) > 1 + 1e-15).any():
            raise ConfigurationError("hazards must be nonnegative with h1 + h2 <= 1")
        if at_risk is None:
            at_risk = np.full(h.shape[1:], np.nan)
        return cls(hazard=h, at_risk=np.asarray(at_risk, float), events=np.full(h.shape, np.nan))


def discrete_hazards(events: EventData, horizon: int | None = None) -> HazardTable:
    """Cause-specific hazards: events of type j at k divided by the risk set at k, per arm."""
    tab = tally(events, horizon)
    if (tab.at_risk[0] <= 0).any():
        raise RiskSetExhausted("both arms need subjects at risk at the first interval")
    with np.errstate(invalid="ignore", divide="ignore"):
        hz = np.where(tab.at_risk > 0, tab.events / np.where(tab.at_risk > 0, tab.at_risk, 1), 0.0)
    return HazardTable(hazard=hz, at_risk=tab.at_risk, events=tab.events)


@dataclass(frozen=True, eq=False)
class IncidenceTable:
    """``mu[j-1, k-1, a]`` cumulative incidence and ``survival[k-1, a]``."""

    mu: np.ndarray
    survival: np.ndarray

    @property
    def K(self) -> int:
        return self.mu.shape[1]


def cumulative_incidence(h: HazardTable) -> IncidenceTable:
    """mu_k^j(a) = sum_{i<=k} h_i^j(a) * prod_{l<i} h_l^0(a)."""
    h0 = h.h0
    survival = np.cumprod(h0, axis=0)
    before = np.vstack([np.ones((1, 2)), survival[:-1]])
    mu = np.cumsum(h.hazard * before[None], axis=1)
    return IncidenceTable(mu=mu, survival=survival)


def _check_k(k, K):
    if not 1 <= k <= K:
        raise ConfigurationError(f"interval {k} outside 1..{K}")


def cce_k(incidence: IncidenceTable, k: int) -> RatioEstimate:
    """Time-to-event contrast conditional on exposure at interval k."""
    _check_k(k, incidence.K)
    mu = incidence.mu[:, k - 1, :]
    for (j, a), name in (((0, 0), "mu_k^1(0)"), ((1, 1), "mu_k^2(1)"), ((0, 1), "mu_k^1(1)"), ((1, 0), "mu_k^2(0)")):
        if mu[j, a] <= 0:
            raise DegenerateIncidence(f"{name} is zero at k={k}", cell=name)
    point = (mu[0, 1] / mu[0, 0]) / (mu[1, 1] / mu[1, 0])
    return RatioEstimate(float(point), "cce_k", stratum="marginal",
                         assumptions=["A1", "S1-TTE-randomization", "S2a-TTE-exposure-necessity"],
                         notes={"k": k})


def cse_k_nonparametric(h: HazardTable, k: int) -> RatioEstimate:
    """[h^1_k(1)/h^1_k(0)] / [h^2_k(1)/h^2_k(0)] from the discrete hazards."""
    _check_k(k, h.K)
    if (h.at_risk[k - 1] <= 0).any():
        raise RiskSetExhausted(f"empty risk set at interval {k}")
    hk = h.hazard[:, k - 1, :]
    for j in (0, 1):
        for a in (0, 1):
            if hk[j, a] <= 0:
                raise DegenerateCounts(f"zero hazard for cause {j + 1}, arm {a} at interval {k}",
                                       cell=f"h[{j + 1}][{k}][{a}]")
    point = (hk[0, 1] / hk[0, 0]) / (hk[1, 1] / hk[1, 0])
    return RatioEstimate(float(point), "cse_k", assumptions=list(TTE_ASSUMPTIONS),
                         notes={"k": k, "method": "nonparametric"})


def _window(window, K):
    if isinstance(window, int):
        window = (window, window)
    k1, k2 = int(window[0]), int(window[1])
    if not 1 <= k1 <= k2 <= K:
        raise ConfigurationError(f"window {k1}:{k2} not within 1..{K}")
    return k1, k2


def parse_window(text: str):
    """``"1:3"`` -> (1, 3); ``"4"`` -> (4, 4)."""
    try:
        if ":" in text:
            lo, hi = text.split(":")
            return int(lo), int(hi)
        return int(text), int(text)
    except ValueError:
        raise ConfigurationError(f"bad window {text!r}; expected k1:k2") from None


def windowed_cumulative_hazard(h: HazardTable, window) -> np.ndarray:
    """Nelson-Aalen increments summed over ``window``; shape (2 causes, 2 arms)."""
    k1, k2 = _window(window, h.K)
    if (h.at_risk[k1 - 1:k2] <= 0).any():
        raise RiskSetExhausted(f"empty risk set inside window {k1}:{k2}")
    return h.hazard[:, k1 - 1:k2, :].sum(axis=1)


def nelson_aalen(events: EventData, cause: int, window) -> np.ndarray:
    """Cumulative cause-specific hazard over ``window`` = sum of d_k / R_k, per arm ``[arm0, arm1]``."""
    if cause not in (1, 2):
        raise ConfigurationError("cause must be 1 or 2")
    return windowed_cumulative_hazard(discrete_hazards(events), window)[cause - 1]


def cse_window(h: HazardTable, window) -> RatioEstimate:
    """Windowed analogue of the CSE: ratio of arm-wise cumulative-hazard ratios across causes."""
    k1, k2 = _window(window, h.K)
    lam = windowed_cumulative_hazard(h, (k1, k2))
    for j in (0, 1):
        for a in (0, 1):
            if lam[j, a] <= 0:
                raise DegenerateCounts(f"no cause-{j + 1} events in arm {a} within window {k1}:{k2}",
                                       cell=f"Lambda[{j + 1}][{a}]")
    point = (lam[0, 1] / lam[0, 0]) / (lam[1, 1] / lam[1, 0])
    return RatioEstimate(float(point), "cse_window", assumptions=list(TTE_ASSUMPTIONS),
                         notes={"window": [k1, k2], "method": "nelson-aalen"})


def cse_window_log_variance(h: HazardTable, window) -> float:
    """Delta-method variance of the log windowed CSE.

    Within an arm the two causes share a risk set, so their increments are
    multinomial: Var = sum d(R-d)/R^3 and Cov = -sum d1 d2 / R^3.  With a
    single interval this is 1/d11 + 1/d10 + 1/d21 + 1/d20.
    """
    k1, k2 = _window(window, h.K)
    d = h.events[:, k1 - 1:k2, :]
    r = h.at_risk[k1 - 1:k2, :]
    if (r <= 0).any():
        raise RiskSetExhausted(f"empty risk set inside window {k1}:{k2}")
    lam = (d / r[None]).sum(axis=1)
    if (lam <= 0).any():
        raise DegenerateCounts("a cause/arm has no events in the window")
    var = (d * (r[None] - d) / r[None] ** 3).sum(axis=1)
    cov = -(d[0] * d[1] / r ** 3).sum(axis=0)
    total = 0.0
    for a in (0, 1):
        total += var[0, a] / lam[0, a] ** 2 + var[1, a] / lam[1, a] ** 2
        total -= 2.0 * cov[a] / (lam[0, a] * lam[1, a])
    return float(total)


# --- Cox partial likelihood --------------------------------------------------


@dataclass(frozen=True)
class CoxFit:
    beta: float
    se: float
    cause: int
    iterations: int
    converged: bool
    loglik: float
    score: float


def _cox_arrays(tab: EventTally, cause: int):
    j, other = cause - 1, 2 - cause
    d = tab.events[j]  # (K, 2)
    risk = tab.at_risk - tab.events[other]
    return d[:, 1], d[:, 0], risk[:, 1], risk[:, 0]


def breslow_loglik(beta: float, d1, d0, r1, r0) -> float:
    """Log partial likelihood (Breslow ties) for one binary covariate on aggregated data."""
    d1, d0, r1, r0 = map(np.asarray, (d1, d0, r1, r0))
    dk = d1 + d0
    keep = dk > 0
    with np.errstate(divide="ignore"):
        lse = np.logaddexp(np.log(r0[keep]), np.log(r1[keep]) + beta)
    return float(beta * d1[keep].sum() - (dk[keep] * lse).sum())


def cox_from_counts(d1, d0, r1, r0, cause: int = 1, tol: float = 1e-10, max_iter: int = 50) -> CoxFit:
    """Newton-Raphson with step halving on the aggregated partial likelihood."""
    d1, d0, r1, r0 = (np.asarray(x, dtype=float) for x in (d1, d0, r1, r0))
    keep = (d1 + d0) > 0
    d1, d0, r1, r0 = d1[keep], d0[keep], r1[keep], r0[keep]
    if (r1 + r0 <= 0).any() or (d1 > r1).any() or (d0 > r0).any():
        raise ConfigurationError("events exceed the risk set")
    # Only risk sets holding both arms carry information about beta.
    mixed = (r1 > 0) & (r0 > 0)
    if d1[mixed].sum() == 0 or d0[mixed].sum() == 0:
        arm = 1 if d0[mixed].sum() == 0 else 0
        raise SeparationError(
            f"cause {cause}: every informative event is in arm {arm}; the partial likelihood is monotone"
        )
    total1 = d1.sum()
    dk = d1 + d0
    with np.errstate(divide="ignore"):
        offset = np.log(r1) - np.log(r0)

    def score_info(beta):
        pi = 1.0 / (1.0 + np.exp(-(beta + offset)))
        return float(total1 - (dk * pi).sum()), float((dk * pi * (1.0 - pi)).sum())

    beta = 0.0
    ll = breslow_loglik(beta, d1, d0, r1, r0)
    score, info = score_info(beta)
    it = 0
    while abs(score) >= tol and it < max_iter:
        it += 1
        if info <= 0:
            raise CoxNoConverge(f"cause {cause}: information is not positive")
        step = score / info
        for _ in range(60):
            cand = beta + step
            ll_c = breslow_loglik(cand, d1, d0, r1, r0)
            if ll_c >= ll - 1e-12 * abs(ll):
                break
            step /= 2.0
        beta, ll = cand, ll_c
        score, info = score_info(beta)
    converged = abs(score) < tol
    if not converged:
        raise CoxNoConverge(f"cause {cause}: no convergence after {it} iterations (score {score:.3g})")
    return CoxFit(beta=beta, se=1.0 / math.sqrt(info), cause=cause, iterations=it,
                  converged=True, loglik=ll, score=score)


def cox_fit(events: EventData, cause: int) -> CoxFit:
    """Cause-specific Cox model with treatment as the only covariate.

    Competing-cause events and drop-outs are treated as censoring.
    """
    if cause not in (1, 2):
        raise ConfigurationError("cause must be 1 or 2")
    return cox_from_counts(*_cox_arrays(tally(events), cause), cause=cause)


def cse_cox_point(events: EventData) -> float:
    tab = tally(events)
    b1 = cox_from_counts(*_cox_arrays(tab, 1), cause=1).beta
    b2 = cox_from_counts(*_cox_arrays(tab, 2), cause=2).beta
    return math.exp(b1 - b2)


def cse_cox(events: EventData, plan=None, workers=None) -> RatioEstimate:
    """exp(beta_1 - beta_2) from two cause-specific Cox fits; bootstrap CI when ``plan`` is given."""
    tab = tally(events)
    fit1 = cox_from_counts(*_cox_arrays(tab, 1), cause=1)
    fit2 = cox_from_counts(*_cox_arrays(tab, 2), cause=2)
    est = RatioEstimate(math.exp(fit1.beta - fit2.beta), "cse_cox", assumptions=list(TTE_ASSUMPTIONS),
                        notes={"beta_1": fit1.beta, "beta_2": fit2.beta,
                               "se_1": fit1.se, "se_2": fit2.se, "method": "cox"})
    if plan is not None:
        from .uncertainty import bootstrap_ci

        res = bootstrap_ci(events, cse_cox_point, plan, workers)
        est.with_interval(res.lo, res.hi, "bootstrap", alpha=plan.alpha)
        est.notes["bootstrap"] = res.summary
    return est


@dataclass(frozen=True)
class CoxModelFit:
    """Cause-specific Cox fit with several covariates (Breslow ties)."""

    names: tuple
    beta: np.ndarray
    cov: np.ndarray
    cause: int
    iterations: int
    loglik: float

    def coef(self, name: str) -> float:
        return float(self.beta[self.names.index(name)])


def _pattern_counts(events: EventData, cause: int, groups: np.ndarray, n_groups: int):
    """Per-pattern event and risk-set counts on the grid, shape (K, n_groups)."""
    K = int(events.horizon)
    t = events.time.astype(np.int64) - 1
    w = events.weight
    own = events.event == cause
    other = events.event == 3 - cause
    flat = lambda mask: np.bincount(t[mask] * n_groups + groups[mask], weights=w[mask],
                                    minlength=K * n_groups).reshape(K, n_groups)
    d = flat(own)
    leaving = flat(np.ones(len(t), bool))
    at_risk = leaving[::-1].cumsum(axis=0)[::-1]
    return d, at_risk - flat(other)


def cox_fit_design(events: EventData, cause: int, covariate: str | None = None,
                   tol: float = 1e-10, max_iter: int = 50) -> CoxModelFit:
    """Cause-specific Cox model on treatment plus indicators for a categorical covariate.

    The first level (in sorted order) is the reference.  Fitting works on
    counts aggregated by (interval, arm, level), so cost does not grow with n.
    """
    if cause not in (1, 2):
        raise ConfigurationError("cause must be 1 or 2")
    if covariate is None:
        level_idx, levels = np.zeros(len(events), np.int64), np.array(["all"])
    else:
        if covariate not in events.covariates:
            raise ConfigurationError(f"unknown covariate {covariate!r}")
        levels, level_idx = np.unique(events.covariates[covariate], return_inverse=True)
    L = len(levels)
    groups = events.a.astype(np.int64) * L + level_idx
    d, r = _pattern_counts(events, cause, groups, 2 * L)
    X = np.zeros((2 * L, L))
    X[L:, 0] = 1.0
    for lv in range(1, L):
        X[lv, lv] = X[L + lv, lv] = 1.0
    names = ("a",) + tuple(f"{covariate}={lv}" for lv in levels[1:])

    keep = d.sum(axis=1) > 0
    d, r = d[keep], r[keep]
    dk = d.sum(axis=1)
    dx = (d @ X).sum(axis=0)
    for col in range(L):
        on = (d.sum(axis=0) * X[:, col]).sum()
        if on == 0 or on == dk.sum():
            raise SeparationError(f"cause {cause}: no events on one side of {names[col]}")

    def evaluate(beta):
        eta = X @ beta
        with np.errstate(divide="ignore"):
            logw = np.log(r) + eta
        top = logw.max(axis=1, keepdims=True)
        lse = top[:, 0] + np.log(np.exp(logw - top).sum(axis=1))
        ll = float(dx @ beta - (dk * lse).sum())
        w = np.exp(logw - lse[:, None])
        mean = w @ X
        score = dx - dk @ mean
        second = np.einsum("kp,pi,pj->kij", w, X, X)
        info = np.einsum("k,kij->ij", dk, second - mean[:, :, None] * mean[:, None, :])
        return ll, score, info

    beta = np.zeros(L)
    ll, score, info = evaluate(beta)
    it = 0
    while np.abs(score).max() >= tol and it < max_iter:
        it += 1
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise CoxNoConverge(f"cause {cause}: singular information matrix") from None
        for _ in range(60):
            cand = beta + step
            res = evaluate(cand)
            if res[0] >= ll - 1e-12 * abs(ll):
                break
            step = step / 2.0
        beta, (ll, score, info) = cand, res
    if np.abs(score).max() >= tol:
        raise CoxNoConverge(f"cause {cause}: no convergence after {it} iterations")
    return CoxModelFit(names=names, beta=beta, cov=np.linalg.inv(info), cause=cause, iterations=it, loglik=ll)

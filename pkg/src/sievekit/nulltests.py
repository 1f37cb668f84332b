"""Confidence-interval inversion tests for sieve-type nulls on time-to-event data.

Every test reports an interval and rejects exactly when the null value
(1 for ratios, 0 for log-scale differences) falls outside it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .data import EventData
from .errors import ConfigurationError, Degeneracy, DegenerateCounts, TestInfeasible
from .survival import (
    TTE_ASSUMPTIONS,
    cox_fit_design,
    cse_window,
    cse_window_log_variance,
    discrete_hazards,
    windowed_cumulative_hazard,
)
from .uncertainty import BootstrapPlan, _z, bootstrap_replicates, log_interval

COMPOSITE_NOTE = (
    "H0w joins 'no sieve effect' with proportional waning across variants; "
    "a rejection means at least one of the two fails and is not on its own evidence of a sieve effect"
)
SCOPE_NOTE = "conclusion concerns the observed covariate only; unmeasured factors are not examined"


@dataclass
class TestResult:
    __test__ = False

    statistic: float
    ci: tuple
    alpha: float
    reject: bool
    null_id: str
    null_value: float = 1.0
    detail: list = field(default_factory=list)
    assumptions: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "null_id": self.null_id,
            "statistic": self.statistic,
            "ci": list(self.ci),
            "alpha": self.alpha,
            "null_value": self.null_value,
            "reject": self.reject,
            "detail": self.detail,
            "assumptions": list(self.assumptions),
            "notes": dict(self.notes),
        }


def _excludes(lo, hi, value) -> bool:
    return not (lo <= value <= hi)


def _margin(lo, hi, value, log_scale=True):
    """Positive when ``value`` lies outside [lo, hi]; how far, on the test's scale."""
    if log_scale:
        lo, hi, value = math.log(lo), math.log(hi), math.log(value)
    return max(lo - value, value - hi)


def _percentile(values, alpha):
    ok = values[np.isfinite(values)]
    if ok.size == 0:
        raise Degeneracy("all bootstrap replicates were degenerate")
    lo, hi = np.quantile(ok, [alpha / 2.0, 1.0 - alpha / 2.0])
    return float(lo), float(hi), int(values.size - ok.size)


def _window_interval(events, h, window, alpha, ci_method, plan, workers):
    est = cse_window(h, window)
    if ci_method == "wald":
        lo, hi = log_interval(est.point, cse_window_log_variance(h, window), alpha)
        return est.point, lo, hi, {}
    if ci_method == "bootstrap":
        plan = plan or BootstrapPlan(1000, 0, alpha)
        reps = bootstrap_replicates(events, lambda ev: cse_window(discrete_hazards(ev), window).point,
                                    plan, workers)
        lo, hi, bad = _percentile(reps, alpha)
        return est.point, lo, hi, {"bootstrap": {"replicates": plan.replicates, "degenerate": bad}}
    raise ConfigurationError(f"unknown CI method {ci_method!r}; expected wald or bootstrap")


def strong_null_test(events: EventData, k=None, window=None, alpha: float = 0.05, ci_method: str = "wald",
                     plan: BootstrapPlan | None = None, workers=None) -> TestResult:
    """Test CSE = 1 at interval ``k`` (or over ``window``) by inverting an interval for the CSE.

    At a single interval the statistic is the nonparametric CSE_k; over a
    window it is the ratio of Nelson-Aalen cumulative-hazard ratios.
    """
    if (k is None) == (window is None):
        raise ConfigurationError("give exactly one of k and window")
    h = discrete_hazards(events)
    win = (k, k) if k is not None else window
    point, lo, hi, extra = _window_interval(events, h, win, alpha, ci_method, plan, workers)
    return TestResult(
        statistic=point, ci=(lo, hi), alpha=alpha, reject=_excludes(lo, hi, 1.0),
        null_id="strong_sharp_k", detail=[{"window": list(win), "ci_method": ci_method, **extra}],
        assumptions=list(TTE_ASSUMPTIONS),
    )


def h0w_test(events: EventData, windows, alpha: float = 0.05, ci_method: str = "wald",
             plan: BootstrapPlan | None = None, workers=None) -> TestResult:
    """Composite test of no sieve effect plus proportional waning, one contrast per window.

    Each window gets a Bonferroni interval at level ``alpha / len(windows)``;
    the reported statistic and interval are those of the window furthest
    from 1, so ``reject`` holds exactly when some window excludes 1.
    """
    windows = [tuple(w) for w in windows]
    if not windows:
        raise ConfigurationError("h0w test needs at least one window")
    level = alpha / len(windows)
    h = discrete_hazards(events)
    detail, best = [], None
    for win in windows:
        try:
            point, lo, hi, extra = _window_interval(events, h, win, level, ci_method, plan, workers)
        except Degeneracy as exc:
            detail.append({"window": list(win), "degenerate": str(exc)})
            continue
        row = {"window": list(win), "ratio": point, "ci": [lo, hi], "reject": _excludes(lo, hi, 1.0), **extra}
        detail.append(row)
        m = _margin(lo, hi, 1.0)
        if best is None or m > best[0]:
            best = (m, point, lo, hi)
    if best is None:
        raise TestInfeasible("every window is degenerate")
    _, point, lo, hi = best
    return TestResult(
        statistic=point, ci=(lo, hi), alpha=alpha, reject=_excludes(lo, hi, 1.0), null_id="h0w",
        detail=detail, assumptions=list(TTE_ASSUMPTIONS),
        notes={"composite": COMPOSITE_NOTE, "bonferroni_level": level},
    )


# --- scaled new infection ----------------------------------------------------------


def _levels(events, covariate):
    if covariate not in events.covariates:
        raise ConfigurationError(f"unknown covariate {covariate!r}")
    col = events.covariates[covariate]
    levels = sorted(set(col[events.weight > 0].tolist()))
    if len(levels) < 2:
        raise TestInfeasible(f"covariate {covariate!r} has fewer than two observed levels")
    return col, levels


def _level_contrasts(events, covariate, levels, window):
    """log[L1(l)/L2(l)] per (level, arm) with Nelson-Aalen cumulative hazards; plus variances."""
    col = events.covariates[covariate]
    logs = np.empty((len(levels), 2))
    var = np.empty((len(levels), 2))
    for i, lv in enumerate(levels):
        sub = events.take(col == lv)
        h = discrete_hazards(sub, events.horizon)
        lam = windowed_cumulative_hazard(h, window)
        if (lam <= 0).any():
            raise DegenerateCounts(f"level {lv}: a cause/arm has no events in the window")
        logs[i] = np.log(lam[0]) - np.log(lam[1])
        k1, k2 = window
        d = h.events[:, k1 - 1:k2, :]
        r = h.at_risk[k1 - 1:k2, :]
        v = (d * (r[None] - d) / r[None] ** 3).sum(axis=1)
        c = -(d[0] * d[1] / r ** 3).sum(axis=0)
        var[i] = v[0] / lam[0] ** 2 + v[1] / lam[1] ** 2 - 2 * c / (lam[0] * lam[1])
    return logs, var


def scaled_infection_falsification(events: EventData, covariate: str, alpha: float = 0.05,
                                   method: str = "nonparam", ci_method: str = "bootstrap",
                                   plan: BootstrapPlan | None = None, window=None, workers=None) -> TestResult:
    """Check that a covariate shifts both cause-specific hazards by the same factor.

    For each pair of levels (l, m) the statistic is the cause-1 minus cause-2
    log hazard ratio of m against l.  ``method="nonparam"`` uses cumulative
    hazards over ``window`` (default: the whole follow-up) within each arm,
    averaged over arms, with bootstrap or delta-method intervals;
    ``method="cox"`` uses the covariate coefficients of the two cause-specific
    Cox models (treatment plus level indicators).  Intervals are Bonferroni
    adjusted over pairs.  A non-rejection means "not falsified".
    """
    _, levels = _levels(events, covariate)
    pairs = list(itertools.combinations(range(len(levels)), 2))
    level = alpha / len(pairs)
    win = tuple(window) if window is not None else (1, int(events.horizon))
    rows = []

    if method == "cox":
        fits = [cox_fit_design(events, j, covariate) for j in (1, 2)]
        delta = fits[0].beta[1:] - fits[1].beta[1:]
        cov = fits[0].cov[1:, 1:] + fits[1].cov[1:, 1:]
        full = np.concatenate([[0.0], delta])
        full_cov = np.zeros((len(levels), len(levels)))
        full_cov[1:, 1:] = cov
        z = _z(level)
        for i, j in pairs:
            diff = full[j] - full[i]
            se = math.sqrt(full_cov[i, i] + full_cov[j, j] - 2 * full_cov[i, j])
            rows.append((i, j, diff, diff - z * se, diff + z * se))
        ci_method = "wald"
    elif method == "nonparam":
        logs, var = _level_contrasts(events, covariate, levels, win)
        point = logs.mean(axis=1)
        if ci_method == "wald":
            z = _z(level)
            for i, j in pairs:
                se = 0.5 * math.sqrt(var[i].sum() + var[j].sum())
                diff = point[j] - point[i]
                rows.append((i, j, diff, diff - z * se, diff + z * se))
        elif ci_method == "bootstrap":
            plan = plan or BootstrapPlan(1000, 0, alpha)

            def stat(ev):
                p = _level_contrasts(ev, covariate, levels, win)[0].mean(axis=1)
                return [p[j] - p[i] for i, j in pairs]

            reps = bootstrap_replicates(events, stat, plan, workers, dim=len(pairs))
            bad = np.isnan(reps).any(axis=1)
            if bad.all():
                raise Degeneracy("all bootstrap replicates were degenerate")
            lo, hi = np.quantile(reps[~bad], [level / 2.0, 1.0 - level / 2.0], axis=0)
            for n_, (i, j) in enumerate(pairs):
                rows.append((i, j, float(point[j] - point[i]), float(lo[n_]), float(hi[n_])))
        else:
            raise ConfigurationError(f"unknown CI method {ci_method!r}")
    else:
        raise ConfigurationError(f"unknown method {method!r}; expected nonparam or cox")

    detail, best = [], None
    for i, j, diff, lo, hi in rows:
        detail.append({"levels": [str(levels[i]), str(levels[j])], "difference": diff, "ci": [lo, hi],
                       "reject": _excludes(lo, hi, 0.0)})
        m = _margin(lo, hi, 0.0, log_scale=False)
        if best is None or m > best[0]:
            best = (m, diff, lo, hi)
    _, diff, lo, hi = best
    reject = _excludes(lo, hi, 0.0)
    return TestResult(
        statistic=diff, ci=(lo, hi), alpha=alpha, reject=reject, null_id="scaled_infection", null_value=0.0,
        detail=detail, assumptions=["S5-scaled-new-infection"],
        notes={"conclusion": "falsified" if reject else "not falsified", "scope": SCOPE_NOTE,
               "method": method, "ci_method": ci_method, "bonferroni_level": level, "window": list(win)},
    )

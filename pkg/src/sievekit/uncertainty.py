"""Interval estimates for the ratio estimands, analytic and resampled.

``alpha`` is always the significance level (0.05 for a 95% interval).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import BootstrapFailure, ConfigurationError, Degeneracy, DegenerateCounts, DomainError


def normal_quantile(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability {p} outside (0, 1)")
    return float(special.ndtri(p))


def _z(alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha {alpha} outside (0, 1)")
    return normal_quantile(1.0 - alpha / 2.0)


def f_cdf(x: float, d1: float, d2: float) -> float:
    """CDF of the F(d1, d2) distribution via the regularized incomplete beta."""
    if x <= 0:
        return 0.0
    return float(special.betainc(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2)))


def f_quantile(p: float, d1: float, d2: float) -> float:
    """Quantile of F(d1, d2), inverting the incomplete beta on ``t = d1 x / (d1 x + d2)``."""
    if not (d1 > 0 and d2 > 0):
        raise DomainError(f"degrees of freedom must be positive, got ({d1}, {d2})")
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability {p} outside (0, 1)")
    t = float(special.betaincinv(d1 / 2.0, d2 / 2.0, p))
    return d2 * t / (d1 * (1.0 - t))


# --- Katz (method C) -------------------------------------------------------------


def katz_log_variance(x1: float, n1: float, x0: float, n0: float) -> float:
    """Variance of log(x1/n1 / x0/n0): (1-p1)/(n1 p1) + (1-p0)/(n0 p0)."""
    for x, n, arm in ((x1, n1, 1), (x0, n0, 0)):
        if not 0 < x < n:
            raise DegenerateCounts(f"arm {arm}: need 0 < events < total, got {x}/{n}", cell=(arm, x, n))
    p1, p0 = x1 / n1, x0 / n0
    return (1 - p1) / (n1 * p1) + (1 - p0) / (n0 * p0)


def log_interval(point: float, variance: float, alpha: float):
    half = _z(alpha) * math.sqrt(variance)
    centre = math.log(point)
    return math.exp(centre - half), math.exp(centre + half)


def katz_ci(rr_point: float, cells, alpha: float = 0.05):
    """Log-normal interval for a risk ratio from ``cells = (x1, n1, x0, n0)``."""
    x1, n1, x0, n0 = cells
    return log_interval(rr_point, katz_log_variance(x1, n1, x0, n0), alpha)


def ccs_log_variance(counts, method: str = "sum", mode: str = "observed", continuity=None) -> float:
    """Variance of log CCS.

    ``sum`` adds the two variant-wise Katz variances (ignores their
    correlation).  ``decomposition`` splits the CCS into
    RR(Y=1) * [P(Y=2|A=0,Y!=1)/P(Y=2|A=1,Y!=1)] * [P(Y!=1|A=0)/P(Y!=1|A=1)];
    the middle factor is independent of the other two, and RR(Y=1) is
    combined with the non-variant-1 ratio P(Y!=1|A=1)/P(Y!=1|A=0) under
    correlation -1.  In exposure-conditional mode the two variant-wise
    ratios come from the disjoint E=1 and E=2 slices and are independent.
    """
    from .estimands import _exposure_cells, _rr_cells

    if mode == "exposure_conditional":
        c1, c2 = _exposure_cells(counts, continuity)
        return katz_log_variance(*c1) + katz_log_variance(*c2)
    if mode != "observed":
        raise ConfigurationError(f"unknown mode {mode!r}")
    n = counts.unique_exposure()
    c1, c2 = _rr_cells(n, 1, continuity), _rr_cells(n, 2, continuity)
    v1 = katz_log_variance(*c1)
    if method == "sum":
        return v1 + katz_log_variance(*c2)
    if method != "decomposition":
        raise ConfigurationError(f"unknown CCS interval method {method!r}")
    x11, n1, x10, n0 = c1
    x21, x20 = c2[0], c2[2]
    m1, m0 = n1 - x11, n0 - x10
    v_mid = katz_log_variance(x20, m0, x21, m1)
    v_not1 = katz_log_variance(m1, n1, m0, n0)
    return v_mid + v1 + v_not1 - 2.0 * math.sqrt(v1 * v_not1)


def ccs_ci(counts, alpha: float = 0.05, method: str = "sum", mode: str = "observed", continuity=None):
    """Log-symmetric interval around the CCS point estimate."""
    from .estimands import ccs

    point = ccs(counts, mode=mode, continuity=continuity).point
    return log_interval(point, ccs_log_variance(counts, method, mode, continuity), alpha)


def eet_trinomial_ci(y1: int, y2: int, alpha: float = 0.05):
    """Conservative interval for the ratio y1/y2 of two trinomial cell counts.

    Conditions on y1 + y2 and inverts the exact binomial (F-distribution)
    limits for the split.
    """
    if y1 < 1 or y2 < 1:
        raise DegenerateCounts(f"need y1 >= 1 and y2 >= 1, got ({y1}, {y2})", cell=(y1, y2))
    q = 1.0 - alpha / 2.0
    lower = 1.0 / ((y2 + 1) / y1 * f_quantile(q, 2 * (y2 + 1), 2 * y1))
    upper = (y1 + 1) / y2 * f_quantile(q, 2 * (y1 + 1), 2 * y2)
    return lower, upper


# --- bootstrap -----------------------------------------------------------------


@dataclass(frozen=True)
class BootstrapPlan:
    replicates: int
    master_seed: int
    alpha: float = 0.05
    statistic: str = ""

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigurationError("bootstrap needs at least one replicate")
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha {self.alpha} outside (0, 1)")


@dataclass
class BootstrapResult:
    lo: float
    hi: float
    replicates: int
    used: int
    degenerate: int
    values: np.ndarray = field(repr=False)

    @property
    def summary(self) -> dict:
        return {"replicates": self.replicates, "used": self.used, "degenerate": self.degenerate}


def replicate_rng(master_seed: int, r: int) -> np.random.Generator:
    """Independent stream for replicate ``r``; the same for any execution order."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed) & (2**64 - 1), int(r)]))


def worker_count(workers=None) -> int:
    if workers is None:
        workers = int(os.environ.get("SIEVEKIT_THREADS", "1") or 1)
    return max(1, int(workers))


def bootstrap_replicates(data, statistic, plan: BootstrapPlan, workers=None, dim: int | None = None) -> np.ndarray:
    """Evaluate ``statistic`` on ``plan.replicates`` resamples; NaN marks degenerate ones.

    Resampling draws a multinomial over the collapsed rows of ``data`` (same
    law as drawing subjects with replacement).  With ``dim`` set the
    statistic returns a vector of that length and the result has shape
    ``(replicates, dim)``; a replicate is degenerate if any entry is.
    """
    base = data.collapse()
    total = base.n_subjects
    pvals = base.weight / total
    values = np.full(plan.replicates if dim is None else (plan.replicates, dim), np.nan)

    def run(indices):
        for r in indices:
            rng = replicate_rng(plan.master_seed, r)
            sample = base.with_weight(rng.multinomial(total, pvals))
            try:
                v = statistic(sample)
                v = float(v) if dim is None else np.asarray(v, dtype=float).reshape(dim)
            except Degeneracy:
                continue
            if np.isfinite(v).all():
                values[r] = v

    lanes = worker_count(workers)
    chunks = [range(i, plan.replicates, lanes) for i in range(lanes)]
    if lanes == 1:
        run(chunks[0])
    else:
        with ThreadPoolExecutor(max_workers=lanes) as pool:
            list(pool.map(run, chunks))
    return values


def bootstrap_ci(data, statistic, plan: BootstrapPlan, workers=None) -> BootstrapResult:
    """Percentile bootstrap interval; degenerate replicates are dropped and counted."""
    values = bootstrap_replicates(data, statistic, plan, workers)
    ok = values[np.isfinite(values)]
    if ok.size == 0:
        raise BootstrapFailure(f"all {plan.replicates} bootstrap replicates were degenerate")
    lo, hi = np.quantile(ok, [plan.alpha / 2.0, 1.0 - plan.alpha / 2.0])
    return BootstrapResult(
        lo=float(lo), hi=float(hi), replicates=plan.replicates, used=int(ok.size),
        degenerate=int(plan.replicates - ok.size), values=values,
    )

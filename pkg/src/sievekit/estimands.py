"""Time-fixed estimands computed from a :class:`~sievekit.data.CountTable`.

All functionals are ratios of arm-wise outcome proportions.  Each result
records the identification assumptions it relies on, so a reported number
says what it means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .data import CountTable
from .errors import ConfigurationError, ConflictingConfig, DegenerateCounts, MissingExposure

ASSUMPTIONS = {
    "A1": "unique exposure (no exposure to both variants)",
    "A2": "no effect of treatment on exposure",
    "A3": "randomization: exchangeability, positivity, consistency",
    "A4": "exposure necessity",
    "A5": "no cross-infectivity",
    "A6": "no relative effect of treatment on the variant exposure ratio",
    "S-Exposure-RCT": "exposure exchangeability/positivity/consistency in the treated given L",
    "S-Generalised-exposure-RCT": "exposure exchangeability/positivity/consistency in both arms given L",
    "S-Cond-no-effect-on-exposure": "no relative effect on exposure within strata of L",
    "S-Equal-exposure-treated": "treated subjects are exposed to both variants at the same rate",
    "S-Prop-potential-outcome": "variant-wise potential outcomes proportional across L (treated)",
    "S-General-proportional-potential-outcomes": "variant-wise potential outcomes proportional across L (both arms)",
    "exposure-ratio-measured": "treated exposure ratio estimated from measured exposure",
    "exposure-ratio-supplied": "treated exposure ratio supplied externally",
    "IR0-supplied": "infectivity ratio of the untreated supplied externally",
}

CI_METHODS = ("katz-c", "decomposition", "trinomial-f", "bootstrap", "none")


@dataclass(frozen=True)
class StratumSelector:
    covariate: str | None = None
    level: str | None = None

    @property
    def marginal(self) -> bool:
        return self.covariate is None

    def label(self) -> str:
        return "marginal" if self.marginal else f"{self.covariate}={self.level}"


MARGINAL = StratumSelector()


@dataclass
class RatioEstimate:
    point: float
    estimand: str
    alpha: float = 0.05
    ci_low: float | None = None
    ci_high: float | None = None
    method: str = "none"
    stratum: str = "marginal"
    assumptions: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    @property
    def ci(self):
        return None if self.ci_low is None else (self.ci_low, self.ci_high)

    def with_interval(self, lo, hi, method, alpha=None) -> "RatioEstimate":
        self.ci_low, self.ci_high, self.method = float(lo), float(hi), method
        if alpha is not None:
            self.alpha = alpha
        return self

    def to_dict(self) -> dict:
        out = {
            "estimand": self.estimand,
            "stratum": self.stratum,
            "point": self.point,
            "ci": None if self.ci_low is None else [self.ci_low, self.ci_high],
            "alpha": self.alpha,
            "method": self.method,
            "assumptions": list(self.assumptions),
        }
        if self.notes:
            out["notes"] = dict(self.notes)
        return out


def _select(counts: CountTable, stratum) -> tuple[CountTable, StratumSelector]:
    if stratum is None or (isinstance(stratum, StratumSelector) and stratum.marginal):
        return counts, MARGINAL
    if not isinstance(stratum, StratumSelector):
        if counts.stratify_by is None:
            raise ConfigurationError("table is not stratified; cannot select a stratum")
        stratum = StratumSelector(counts.stratify_by, str(stratum))
    if counts.stratify_by != stratum.covariate:
        raise ConfigurationError(
            f"table is stratified by {counts.stratify_by!r}, not {stratum.covariate!r}"
        )
    return counts.stratum(stratum.level), stratum


def _rr_cells(n, j: int, continuity=None):
    """(x1, n1, x0, n0) for the variant-j risk ratio, optionally continuity corrected."""
    n = np.asarray(n, dtype=float)
    x1, x0 = n[1, j], n[0, j]
    n1, n0 = n[1].sum(), n[0].sum()
    if continuity and min(x1, x0, n1 - x1, n0 - x0) == 0:
        x1, x0 = x1 + continuity, x0 + continuity
        n1, n0 = n1 + 2 * continuity, n0 + 2 * continuity
    for arm, total in ((1, n1), (0, n0)):
        if total <= 0:
            raise DegenerateCounts(f"arm {arm} has no subjects", cell=f"n[{arm}][.]")
    if x0 <= 0:
        raise DegenerateCounts(f"zero count in cell n[0][{j}] (P(Y={j}|A=0) = 0)", cell=f"n[0][{j}]")
    if x1 <= 0:
        raise DegenerateCounts(f"zero count in cell n[1][{j}] (P(Y={j}|A=1) = 0)", cell=f"n[1][{j}]")
    return x1, n1, x0, n0


def _event_cells(n, continuity=None):
    return _rr_cells(n, 1, continuity), _rr_cells(n, 2, continuity)


def _exposure_cells(counts: CountTable, continuity=None):
    """Cells of P(Y=j | A=a, E=j) for j = 1, 2."""
    if counts.n_exposure is None:
        raise MissingExposure("exposure-conditional estimation needs a measured exposure column 'e'")
    ne = np.asarray(counts.n_exposure, dtype=float)
    cells = []
    for j in (1, 2):
        x1, n1 = ne[1, j, j], ne[1, j].sum()
        x0, n0 = ne[0, j, j], ne[0, j].sum()
        if continuity and min(x1, x0, n1 - x1, n0 - x0) == 0:
            x1, x0, n1, n0 = x1 + continuity, x0 + continuity, n1 + 2 * continuity, n0 + 2 * continuity
        for name, v in ((f"n[1][e={j}][.]", n1), (f"n[0][e={j}][.]", n0),
                        (f"n[1][e={j}][{j}]", x1), (f"n[0][e={j}][{j}]", x0)):
            if v <= 0:
                raise DegenerateCounts(f"zero count in exposure-sliced cell {name}", cell=name)
        cells.append((x1, n1, x0, n0))
    return tuple(cells)


def _ratio(cells):
    x1, n1, x0, n0 = cells
    return (x1 / n1) / (x0 / n0)


def rr(counts: CountTable, j: int, stratum=None, interpretation: str = "cece",
       ci: str | None = None, alpha: float = 0.05, continuity=None) -> RatioEstimate:
    """Variant-j risk ratio P(Y=j|A=1) / P(Y=j|A=0).

    Read as the relative CECE(j) it relies on A1-A5; read as the average
    treatment effect ratio ATE(j) it needs randomization only.
    """
    if j not in (1, 2):
        raise ConfigurationError("variant must be 1 or 2")
    table, sel = _select(counts, stratum)
    if interpretation == "cece":
        n, ledger, name = table.unique_exposure(), ["A1", "A2", "A3", "A4", "A5"], f"cece_{j}"
    elif interpretation == "ate":
        n, ledger, name = table.n, ["A3"], f"ate_{j}"
    else:
        raise ConfigurationError(f"unknown interpretation {interpretation!r}")
    cells = _rr_cells(n, j, continuity)
    est = RatioEstimate(_ratio(cells), name, alpha, stratum=sel.label(), assumptions=ledger)
    if ci in ("katz-c", "decomposition"):
        from .uncertainty import katz_ci

        est.with_interval(*katz_ci(est.point, cells, alpha), "katz_c")
    elif ci not in (None, "none"):
        raise ConfigurationError(f"interval method {ci!r} not available for rr")
    return est


def _ccs_point(table: CountTable, mode: str, continuity=None) -> float:
    if mode == "observed":
        c1, c2 = _event_cells(table.unique_exposure(), continuity)
    elif mode == "exposure_conditional":
        c1, c2 = _exposure_cells(table, continuity)
    else:
        raise ConfigurationError(f"unknown mode {mode!r}")
    return _ratio(c1) / _ratio(c2)


def _attach_ccs_interval(est, table, ci, alpha, mode, continuity):
    if ci in (None, "none"):
        return est
    from .uncertainty import ccs_log_variance, log_interval

    if ci == "katz-c":
        var, tag = ccs_log_variance(table, "sum", mode, continuity), "katz_c"
    elif ci == "decomposition":
        if mode != "observed":
            raise ConfigurationError("the decomposition interval applies to observed-mode counts")
        var, tag = ccs_log_variance(table, "decomposition", mode, continuity), "decomposition"
    else:
        raise ConfigurationError(f"interval method {ci!r} not available for {est.estimand}")
    return est.with_interval(*log_interval(est.point, var, alpha), tag)


def ccs(counts: CountTable, stratum=None, mode: str = "observed", ci: str | None = None,
        alpha: float = 0.05, continuity=None) -> RatioEstimate:
    """Contrast conditional on specific exposure: RR(variant 1) / RR(variant 2).

    ``observed`` uses P(Y=j|A=a); ``exposure_conditional`` uses
    P(Y=j|A=a, E=j) and needs measured exposure.
    """
    table, sel = _select(counts, stratum)
    point = _ccs_point(table, mode, continuity)
    ledger = ["A1", "A3", "A4", "A5", "A6"] if mode == "observed" else ["A1", "A3", "A4", "A5"]
    est = RatioEstimate(point, "ccs", alpha, stratum=sel.label(), assumptions=ledger,
                        notes={"mode": mode})
    return _attach_ccs_interval(est, table, ci, alpha, mode, continuity)


def cce(counts: CountTable, stratum=None, ci: str | None = None, alpha: float = 0.05,
        continuity=None) -> RatioEstimate:
    """Contrast conditional on (any) exposure; same functional as observed-mode CCS."""
    table, sel = _select(counts, stratum)
    est = RatioEstimate(_ccs_point(table, "observed", continuity), "cce", alpha,
                        stratum=sel.label(), assumptions=["A1", "A3", "A4"])
    return _attach_ccs_interval(est, table, ci, alpha, "observed", continuity)


def eie(counts: CountTable, stratum=None, ci: str | None = None, alpha: float = 0.05,
        continuity=None) -> RatioEstimate:
    """Effect with intervened exposure, within a stratum of L or marginally."""
    table, sel = _select(counts, stratum)
    ledger = ["A1", "A4", "A5", "S-Cond-no-effect-on-exposure", "S-Generalised-exposure-RCT"]
    if sel.marginal:
        ledger.append("S-General-proportional-potential-outcomes")
    est = RatioEstimate(_ccs_point(table, "observed", continuity), "eie", alpha,
                        stratum=sel.label(), assumptions=ledger)
    return _attach_ccs_interval(est, table, ci, alpha, "observed", continuity)


EET_ROUTES = ("auto", "measured", "equal", "supplied", "ir0")


def eet(counts: CountTable, stratum=None, exposure_ratio: float | None = None,
        ir0: float | None = None, route: str = "auto", ci: str | None = None,
        alpha: float = 0.05, continuity=None) -> RatioEstimate:
    """Effect of exposure under treatment.

    The treated-arm outcome ratio P(Y=1|A=1)/P(Y=2|A=1) is divided by the
    unidentified exposure ratio P(E=1|A=1)/P(E=2|A=1), taken from one of:

    - ``measured``: estimated from the exposure column,
    - ``supplied``: the ``exposure_ratio`` argument,
    - ``equal``: assumed to be 1,
    - ``ir0``: EET = EIE * ir0 with a supplied infectivity ratio of the untreated.

    ``auto`` picks ir0, supplied, measured, equal in that order of availability.
    """
    if exposure_ratio is not None and ir0 is not None:
        raise ConflictingConfig("give either exposure_ratio or ir0, not both")
    if route not in EET_ROUTES:
        raise ConfigurationError(f"unknown EET route {route!r}")
    table, sel = _select(counts, stratum)
    if route == "auto":
        if ir0 is not None:
            route = "ir0"
        elif exposure_ratio is not None:
            route = "supplied"
        elif table.has_exposure:
            route = "measured"
        else:
            route = "equal"
    ledger = ["A1", "A4", "A5", "S-Exposure-RCT"]

    if route == "ir0":
        if ir0 is None or ir0 <= 0:
            raise ConfigurationError("the ir0 route needs a positive ir0")
        base = eie(table, ci=ci if ci != "trinomial-f" else "katz-c", alpha=alpha, continuity=continuity)
        est = RatioEstimate(base.point * ir0, "eet", alpha, stratum=sel.label(),
                            assumptions=ledger + ["S-Cond-no-effect-on-exposure",
                                                  "S-Generalised-exposure-RCT", "IR0-supplied"],
                            notes={"route": "ir0", "ir0": ir0})
        if base.ci is not None:
            est.with_interval(base.ci_low * ir0, base.ci_high * ir0, base.method)
        return _mark_marginal(est, sel)

    n = table.unique_exposure().astype(float)
    y1, y2 = n[1, 1], n[1, 2]
    if continuity and min(y1, y2) == 0:
        y1, y2 = y1 + continuity, y2 + continuity
    if y2 <= 0:
        raise DegenerateCounts("zero count in cell n[1][2]", cell="n[1][2]")
    if y1 <= 0:
        raise DegenerateCounts("zero count in cell n[1][1]", cell="n[1][1]")

    if route == "measured":
        if table.n_exposure is None:
            raise MissingExposure("the measured route needs an exposure column 'e'")
        e1, e2 = table.n_exposure[1, 1].sum(), table.n_exposure[1, 2].sum()
        if e1 <= 0 or e2 <= 0:
            raise DegenerateCounts("no treated subjects exposed to one of the variants",
                                   cell="n[1][e][.]")
        ratio = e1 / e2
        ledger.append("exposure-ratio-measured")
    elif route == "supplied":
        if exposure_ratio is None or exposure_ratio <= 0:
            raise ConfigurationError("the supplied route needs a positive exposure_ratio")
        ratio = float(exposure_ratio)
        ledger.append("exposure-ratio-supplied")
    else:
        ratio = 1.0
        ledger.append("S-Equal-exposure-treated")

    est = RatioEstimate((y1 / y2) / ratio, "eet", alpha, stratum=sel.label(), assumptions=ledger,
                        notes={"route": route, "exposure_ratio": ratio})
    if ci == "trinomial-f":
        from .uncertainty import eet_trinomial_ci

        lo, hi = eet_trinomial_ci(int(round(y1)), int(round(y2)), alpha)
        est.with_interval(lo / ratio, hi / ratio, "trinomial_f")
    elif ci not in (None, "none"):
        raise ConfigurationError(f"interval method {ci!r} not available for eet")
    return _mark_marginal(est, sel)


def _mark_marginal(est, sel):
    if sel.marginal:
        est.assumptions.append("S-Prop-potential-outcome")
    return est


def by_stratum(estimator, counts: CountTable, **kwargs) -> list:
    """Run ``estimator`` in every stratum of a stratified table."""
    if counts.stratify_by is None:
        raise ConfigurationError("table is not stratified")
    return [estimator(counts, StratumSelector(counts.stratify_by, lvl), **kwargs)
            for lvl in counts.strata]


@dataclass
class Heterogeneity:
    q: float
    df: int
    p_value: float
    warn: bool


def heterogeneity(counts: CountTable, alpha: float = 0.05) -> Heterogeneity:
    """Cochran-type check that the per-stratum log EIE values agree.

    Strata with degenerate counts are skipped.  A warning is raised when the
    homogeneity p-value falls below ``alpha``; marginal EIE/EET values then
    rest on a proportionality assumption the data contradict.
    """
    from .uncertainty import ccs_log_variance

    logs, weights = [], []
    for lvl, sub in counts.strata.items():
        try:
            logs.append(math.log(_ccs_point(sub, "observed")))
            weights.append(1.0 / ccs_log_variance(sub, "sum"))
        except DegenerateCounts:
            continue
    if len(logs) < 2:
        return Heterogeneity(0.0, 0, 1.0, False)
    logs, weights = np.array(logs), np.array(weights)
    pooled = np.sum(weights * logs) / weights.sum()
    q = float(np.sum(weights * (logs - pooled) ** 2))
    df = len(logs) - 1
    p = float(stats.chi2.sf(q, df))
    return Heterogeneity(q, df, p, p < alpha)

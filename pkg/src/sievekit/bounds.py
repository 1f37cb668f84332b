"""Partial-identification bounds on the absolute CECE ratio and the vaccine-efficacy ratio.

Only the protective regime (treatment lowers the risk of both variants) is
supported; other sign patterns raise :class:`OutOfRegime`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .data import CountTable
from .errors import DegenerateCounts, DomainError, OutOfRegime


@dataclass(frozen=True)
class IntervalBound:
    lo: float
    hi: float
    target: str
    point_identified: bool
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"lo {self.lo} > hi {self.hi}")

    def contains(self, value: float, rtol: float = 1e-12) -> bool:
        slack = rtol * max(1.0, abs(value))
        return self.lo - slack <= value <= self.hi + slack

    def to_dict(self) -> dict:
        return {"target": self.target, "lo": self.lo, "hi": self.hi,
                "point_identified": self.point_identified, "provenance": dict(self.provenance)}


def _unpack(p):
    p = tuple(float(x) for x in p)
    if len(p) != 4:
        raise DomainError("expected four probabilities P(Y=1|A=0), P(Y=1|A=1), P(Y=2|A=0), P(Y=2|A=1)")
    for name, v in zip(("P(Y=1|A=0)", "P(Y=1|A=1)", "P(Y=2|A=0)", "P(Y=2|A=1)"), p):
        if not 0.0 <= v <= 1.0:
            raise DomainError(f"{name} = {v} is not a probability")
    return p


def acece_ratio_bounds(p) -> IntervalBound:
    """Bounds on [P(Y^0=1|E=1) - P(Y^1=1|E=1)] / [P(Y^0=2|E=2) - P(Y^1=2|E=2)].

    ``p`` holds (P(Y=1|A=0), P(Y=1|A=1), P(Y=2|A=0), P(Y=2|A=1)).  With
    dP_j = P(Y=j|A=0) - P(Y=j|A=1) the interval is
    [dP_1/dP_2 * P(Y=2|A=0), dP_1/dP_2 / P(Y=1|A=0)].
    """
    p10, p11, p20, p21 = _unpack(p)
    if not p10 > p11:
        raise OutOfRegime(f"P(Y=1|A=0)={p10} is not above P(Y=1|A=1)={p11}; only the protective regime is bounded")
    if not p20 > p21:
        raise OutOfRegime(f"P(Y=2|A=0)={p20} is not above P(Y=2|A=1)={p21}; only the protective regime is bounded")
    ratio = (p10 - p11) / (p20 - p21)
    lo, hi = ratio * p20, ratio / p10
    exact = p10 == 1.0 and p20 == 1.0
    return IntervalBound(lo=lo, hi=lo if exact else hi, target="acece_ratio", point_identified=exact,
                         provenance={"probabilities": [p10, p11, p20, p21]})


def _positive_pair(x, name):
    lo, hi = (x, x) if isinstance(x, (int, float)) else tuple(x)
    lo, hi = float(lo), float(hi)
    if not (lo > 0 and hi > 0):
        raise DomainError(f"{name} must be positive, got {x}")
    if lo > hi:
        raise DomainError(f"{name}: lower bound {lo} above upper bound {hi}")
    return lo, hi


def ve_ratio_bounds(p, baseline_cece, source: str = "user-supplied") -> IntervalBound:
    """Bounds on VE_1/VE_2 = aCECEr * P(Y^0=2|E=2) / P(Y^0=1|E=1).

    ``baseline_cece`` is ``(b1, b2)`` with b_j = P(Y^{a=0}=j | E=j); each
    entry may itself be a ``(lo, hi)`` pair, in which case the interval
    widens to cover every combination.
    """
    base = acece_ratio_bounds(p)
    b1 = _positive_pair(baseline_cece[0], "P(Y^0=1|E=1)")
    b2 = _positive_pair(baseline_cece[1], "P(Y^0=2|E=2)")
    scale_lo, scale_hi = b2[0] / b1[1], b2[1] / b1[0]
    lo, hi = base.lo * scale_lo, base.hi * scale_hi
    exact = base.point_identified and scale_lo == scale_hi
    return IntervalBound(lo=lo, hi=lo if exact else hi, target="ve_ratio", point_identified=exact,
                         provenance={**base.provenance, "baseline_cece": {"b1": list(b1), "b2": list(b2),
                                                                          "source": source}})


def probabilities_from_counts(counts: CountTable):
    """Empirical (P(Y=1|A=0), P(Y=1|A=1), P(Y=2|A=0), P(Y=2|A=1)) from a count table."""
    n = counts.unique_exposure()
    tot = n.sum(axis=1)
    if (tot <= 0).any():
        raise DegenerateCounts("an arm has no subjects", cell="arm total")
    return (n[0, 1] / tot[0], n[1, 1] / tot[1], n[0, 2] / tot[0], n[1, 2] / tot[1])


def bounds_from_counts(counts: CountTable, baseline_cece=None) -> IntervalBound:
    p = probabilities_from_counts(counts)
    if baseline_cece is None:
        return acece_ratio_bounds(p)
    return ve_ratio_bounds(p, baseline_cece)

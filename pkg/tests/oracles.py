"""Reference implementations written independently of the package code.

These favour transparency over speed.  Counting loops run over subjects
one at a time and special functions come from mpmath.
"""

from __future__ import annotations

import math
from statistics import NormalDist

import mpmath
import numpy as np
from scipy.optimize import minimize_scalar

mpmath.mp.dps = 40


def expit(x):
    return 1.0 / (1.0 + math.exp(-x))


# --- F distribution --------------------------------------------------------------


def f_cdf_quad(x, d1, d2):
    """F(d1, d2) CDF by numerical integration of the density."""
    d1, d2 = mpmath.mpf(d1), mpmath.mpf(d2)
    norm = mpmath.beta(d1 / 2, d2 / 2)

    def pdf(t):
        return mpmath.sqrt((d1 * t) ** d1 * d2**d2 / (d1 * t + d2) ** (d1 + d2)) / (t * norm)

    return mpmath.quad(pdf, [0, x])


def f_quantile_mp(p, d1, d2):
    """Quantile by bisection on mpmath's regularized incomplete beta."""
    a, b = mpmath.mpf(d1) / 2, mpmath.mpf(d2) / 2
    lo, hi = mpmath.mpf(0), mpmath.mpf(1)
    target = mpmath.mpf(p)
    for _ in range(200):
        mid = (lo + hi) / 2
        if mpmath.betainc(a, b, 0, mid, regularized=True) < target:
            lo = mid
        else:
            hi = mid
    t = (lo + hi) / 2
    return float(d2 * t / (d1 * (1 - t)))


def trinomial_interval(y1, y2, alpha):
    q = 1 - alpha / 2
    lower = y1 / ((y2 + 1) * f_quantile_mp(q, 2 * (y2 + 1), 2 * y1))
    upper = (y1 + 1) / y2 * f_quantile_mp(q, 2 * (y1 + 1), 2 * y2)
    return lower, upper


def katz_interval(x1, n1, x0, n0, alpha):
    p1, p0 = x1 / n1, x0 / n0
    se = math.sqrt((1 - p1) / (n1 * p1) + (1 - p0) / (n0 * p0))
    z = NormalDist().inv_cdf(1 - alpha / 2)
    rr = p1 / p0
    return rr * math.exp(-z * se), rr * math.exp(z * se)


# --- counting ------------------------------------------------------------------------


def recount(records):
    """n[a][y] from (a, y) pairs."""
    n = [[0, 0, 0], [0, 0, 0]]
    for a, y in records:
        n[a][y] += 1
    return n


def hazards_loop(subjects, K):
    """Discrete cause-specific hazards from (a, time, event) triples; returns h[j-1][k-1][a]."""
    h = [[[0.0, 0.0] for _ in range(K)] for _ in range(2)]
    for k in range(1, K + 1):
        for a in (0, 1):
            risk = [s for s in subjects if s[0] == a and s[1] >= k]
            for j in (1, 2):
                d = sum(1 for s in risk if s[1] == k and s[2] == j)
                h[j - 1][k - 1][a] = d / len(risk) if risk else 0.0
    return h


# --- Cox partial likelihood ----------------------------------------------------------


def breslow_terms(subjects, cause):
    """Per event time: (covariate values of the cause-j events, covariate values in the risk set).

    Competing events at time k leave the risk set at k; censoring at k does not.
    """
    terms = []
    for k in sorted({s[1] for s in subjects if s[2] == cause}):
        events = [s[0] for s in subjects if s[1] == k and s[2] == cause]
        risk = [s[0] for s in subjects if s[1] > k or (s[1] == k and s[2] != 3 - cause)]
        terms.append((events, risk))
    return terms


def breslow_loglik(beta, subjects, cause):
    beta = np.asarray(beta, dtype=float)
    total = np.zeros_like(beta)
    for events, risk in breslow_terms(subjects, cause):
        total += beta * sum(events)
        total -= len(events) * np.log(sum(np.exp(beta * x) for x in risk))
    return total


def cox_grid_search(subjects, cause, lo=-10.0, hi=10.0, step=1e-4):
    grid = np.arange(lo, hi + step / 2, step)
    values = breslow_loglik(grid, subjects, cause)
    i = int(np.argmax(values))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = minimize_scalar(lambda x: -float(breslow_loglik(x, subjects, cause)), bounds=(a, b),
                          method="bounded", options={"xatol": 1e-12})
    return float(res.x)


# --- time-fixed oracle --------------------------------------------------------------


def outcome_prob(beta0, beta_e, beta_ea, j, a):
    return expit(beta0 + beta_e[j]) * expit(beta_ea[j - 1] * a)


def population_probabilities(beta0, beta_e, beta_ea, law):
    """P(Y=j|A=a) and P(Y=j|A=a,E=j) from the outcome model, by direct enumeration."""
    p = {}
    pc = {}
    for a in (0, 1):
        for j in (1, 2):
            q = outcome_prob(beta0, beta_e, beta_ea, j, a)
            p[j, a] = law[a][j] * q
            pc[j, a] = q
    return p, pc

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sievekit import dgp
from sievekit.bounds import acece_ratio_bounds, bounds_from_counts, probabilities_from_counts, ve_ratio_bounds
from sievekit.data import CountTable
from sievekit.errors import DomainError, OutOfRegime


def test_closed_form():
    b = acece_ratio_bounds((0.10, 0.05, 0.20, 0.10))
    assert (b.lo, b.hi) == pytest.approx((0.10, 5.0))
    assert not b.point_identified


def test_ve_ratio_rescaling():
    # Baseline P(Y^0=2|E=2) / P(Y^0=1|E=1) = 2.
    b = ve_ratio_bounds((0.10, 0.05, 0.20, 0.10), (0.1, 0.2))
    assert (b.lo, b.hi) == pytest.approx((0.20, 10.0))
    assert b.provenance["baseline_cece"]["source"] == "user-supplied"


def test_ve_ratio_baseline_interval():
    b = ve_ratio_bounds((0.10, 0.05, 0.20, 0.10), ((0.1, 0.2), 0.2))
    assert (b.lo, b.hi) == pytest.approx((0.10, 10.0))


def test_harmful_regime_rejected():
    with pytest.raises(OutOfRegime):
        acece_ratio_bounds((0.05, 0.10, 0.20, 0.10))


@pytest.mark.parametrize("p", [(0.1, 0.05, 0.2), (1.2, 0.05, 0.2, 0.1), (-0.1, 0.05, 0.2, 0.1)])
def test_domain(p):
    with pytest.raises(DomainError):
        acece_ratio_bounds(p)


def test_point_identified_when_no_control_escape():
    b = acece_ratio_bounds((1.0, 0.4, 1.0, 0.7))
    assert b.lo == b.hi and b.point_identified


def test_from_counts():
    t = CountTable.from_counts((850, 50, 100), (700, 100, 200))
    assert probabilities_from_counts(t) == pytest.approx((0.1, 0.05, 0.2, 0.1))
    assert (bounds_from_counts(t).lo, bounds_from_counts(t).hi) == pytest.approx((0.10, 5.0))


def oracle_probabilities(o):
    p = o.probabilities["p_y_given_a"]
    return p[0][1], p[1][1], p[0][2], p[1][2]


def test_d1_truth_inside_bounds():
    o = dgp.oracle(dgp.builtin_scenario("d1"))
    assert acece_ratio_bounds(oracle_probabilities(o)).contains(o.acece_ratio)


coef = st.floats(-3.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(coef, coef, coef, st.floats(-4.0, -0.05), st.floats(-4.0, -0.05),
       st.lists(st.floats(0.05, 1.0), min_size=3, max_size=3))
def test_truth_inside_bounds_for_random_regimes(b0, e1, e2, t1, t2, w):
    law = tuple(x / sum(w) for x in w)
    spec = dgp.DgpSpec("r", beta0=b0, beta_e=(0.0, e1, e2), beta_ea=(t1, t2), exposure_law=(law, law))
    o = dgp.oracle(spec)
    b = acece_ratio_bounds(oracle_probabilities(o))
    assert b.lo <= b.hi and b.contains(o.acece_ratio, rtol=1e-9)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from sievekit import dgp
from sievekit.data import CountTable, EventData
from sievekit.errors import ConfigurationError, DegenerateIncidence, RiskSetExhausted, SeparationError
from sievekit.estimands import ccs
from sievekit.survival import (
    HazardTable,
    cce_k,
    cox_fit,
    cox_fit_design,
    cse_cox,
    cse_k_nonparametric,
    cse_window,
    cse_window_log_variance,
    cumulative_incidence,
    discrete_hazards,
    nelson_aalen,
    parse_window,
)


def events(rows, horizon=None):
    a, t, e = zip(*rows)
    return EventData(a=a, time=t, event=e, horizon=horizon)


@pytest.fixture(scope="module")
def rare():
    return dgp.sample(dgp.builtin_scenario("tte_rare"), 100_000, 3)


class TestHazards:
    def test_ratio_of_events_to_risk_set(self):
        rows = [(0, 1, 1)] * 10 + [(0, 1, 0)] * 10 + [(0, 2, 0)] * 80 + [(1, 2, 0)] * 5
        h = discrete_hazards(events(rows))
        assert h.h(1, 1, 0) == pytest.approx(0.1)

    def test_matches_subject_loop(self, rare):
        sub = rare.take(np.arange(3000))
        want = oracles.hazards_loop(list(zip(sub.a.tolist(), sub.time.tolist(), sub.event.tolist())), sub.horizon)
        assert discrete_hazards(sub).hazard == pytest.approx(np.array(want), abs=1e-15)

    def test_first_interval_empty(self):
        with pytest.raises(RiskSetExhausted):
            discrete_hazards(events([(1, 1, 1), (1, 2, 0)]))

    def test_recovers_generating_hazards(self, rare):
        h = discrete_hazards(rare)
        truth = dgp.oracle(dgp.builtin_scenario("tte_rare")).marginal_hazards
        se = np.sqrt(truth[:, :5] / h.at_risk[None, :5])
        assert np.all(np.abs(h.hazard[:, :5] - truth[:, :5]) < 4 * se)


class TestIncidence:
    def test_two_interval_recursion(self):
        h = HazardTable.from_hazards([[0.1, 0.1], [0.1, 0.1]], [[0.0, 0.0], [0.0, 0.0]])
        assert cumulative_incidence(h).mu[0, 1, 0] == pytest.approx(0.19)

    def test_cce_k_arithmetic(self):
        h = HazardTable.from_hazards([[0.1, 0.04]], [[0.1, 0.06]])
        assert cce_k(cumulative_incidence(h), 1).point == pytest.approx(2 / 3)

    def test_zero_incidence(self):
        h = HazardTable.from_hazards([[0.0, 0.04]], [[0.1, 0.06]])
        with pytest.raises(DegenerateIncidence):
            cce_k(cumulative_incidence(h), 1)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 6), st.data())
    def test_incidence_nondecreasing_and_bounded(self, K, data):
        hz = st.floats(0.0, 0.45)
        h1 = np.array(data.draw(st.lists(st.tuples(hz, hz), min_size=K, max_size=K)))
        h2 = np.array(data.draw(st.lists(st.tuples(hz, hz), min_size=K, max_size=K)))
        inc = cumulative_incidence(HazardTable.from_hazards(h1, h2))
        assert (np.diff(inc.mu, axis=1) >= -1e-15).all()
        assert (inc.mu.sum(axis=0) + inc.survival <= 1 + 1e-12).all()


class TestCseNonparametric:
    def test_arithmetic(self):
        h = HazardTable.from_hazards([[0.02, 0.01]], [[0.02, 0.02]])
        assert cse_k_nonparametric(h, 1).point == pytest.approx(0.5)

    def test_single_interval_equals_ccs(self):
        rows = [(1, 1, 1)] * 40 + [(1, 1, 2)] * 60 + [(1, 1, 0)] * 900
        rows += [(0, 1, 1)] * 100 + [(0, 1, 2)] * 100 + [(0, 1, 0)] * 800
        ev = events(rows)
        t = CountTable.from_counts((900, 40, 60), (800, 100, 100))
        h = discrete_hazards(ev)
        assert cse_k_nonparametric(h, 1).point == pytest.approx(ccs(t).point, rel=1e-12)
        assert cse_window(h, (1, 1)).point == pytest.approx(ccs(t).point, rel=1e-12)

    def test_window_variance_reduces_to_reciprocal_counts(self):
        rows = [(1, 1, 1)] * 40 + [(1, 1, 2)] * 60 + [(1, 1, 0)] * 900
        rows += [(0, 1, 1)] * 100 + [(0, 1, 2)] * 100 + [(0, 1, 0)] * 800
        h = discrete_hazards(events(rows))
        assert cse_window_log_variance(h, 1) == pytest.approx(1 / 40 + 1 / 60 + 1 / 100 + 1 / 100)

    def test_nelson_aalen_nondecreasing(self, rare):
        lam = [nelson_aalen(rare, 1, (1, k)) for k in range(1, 31)]
        assert (np.diff(np.array(lam), axis=0) >= 0).all()

    def test_nelson_aalen_tracks_survival(self, rare):
        # Summed cause-specific hazards approximate -log S when interval hazards are small.
        h = discrete_hazards(rare)
        na = nelson_aalen(rare, 1, (1, 10)) + nelson_aalen(rare, 2, (1, 10))
        exact = -np.log(cumulative_incidence(h).survival[9])
        assert na == pytest.approx(exact, rel=0.02)

    def test_parse_window(self):
        assert parse_window("2:5") == (2, 5) and parse_window("3") == (3, 3)
        with pytest.raises(ConfigurationError):
            parse_window("a:b")


class TestCox:
    def test_symmetric_data_gives_zero(self):
        rows = [(a, t, e) for a in (0, 1) for t, e in ((1, 1), (2, 1), (3, 0), (2, 2))]
        assert cox_fit(events(rows), 1).beta == pytest.approx(0.0, abs=1e-10)

    def test_six_subjects_against_grid_search(self):
        rows = [(1, 1, 1), (0, 1, 1), (0, 2, 1), (1, 3, 0), (0, 3, 1), (1, 2, 2)]
        fit = cox_fit(events(rows), 1)
        assert fit.converged
        assert fit.beta == pytest.approx(oracles.cox_grid_search(rows, 1), abs=1e-6)

    def test_invariant_to_monotone_relabelling_of_times(self):
        rows = [(1, 1, 1), (0, 1, 1), (0, 2, 1), (1, 3, 0), (0, 3, 1), (1, 2, 2), (1, 3, 1)]
        stretched = [(a, {1: 2, 2: 5, 3: 9}[t], e) for a, t, e in rows]
        assert cox_fit(events(rows), 1).beta == pytest.approx(cox_fit(events(stretched), 1).beta, abs=1e-12)

    def test_separation(self):
        rows = [(1, 1, 1), (1, 2, 1), (0, 3, 0), (0, 2, 2), (1, 1, 2)]
        with pytest.raises(SeparationError):
            cox_fit(events(rows), 1)

    def test_separation_hidden_by_empty_risk_set(self):
        # The arm-0 event happens after every arm-1 subject has left, so it carries no information.
        rows = [(1, 1, 1), (1, 1, 0), (0, 1, 0), (0, 2, 1)]
        with pytest.raises(SeparationError):
            cox_fit(events(rows), 1)

    def test_rare_events_close_to_risk_ratio(self, rare):
        for j, m in ((1, 0.3), (2, 0.7)):
            beta = cox_fit(rare, j).beta
            assert math.exp(beta) == pytest.approx(m, rel=0.15)

    def test_cse_cox_near_truth(self, rare):
        est = cse_cox(rare)
        assert est.point == pytest.approx(0.3 / 0.7, rel=0.15)
        assert {"beta_1", "beta_2", "se_1", "se_2"} <= set(est.notes)

    def test_design_fit_matches_single_covariate(self, rare):
        assert cox_fit_design(rare, 1).coef("a") == pytest.approx(cox_fit(rare, 1).beta, abs=1e-8)

    def test_design_fit_against_likelihood_oracle(self):
        rows = [(1, 1, 1, "p"), (0, 1, 1, "q"), (0, 2, 1, "p"), (1, 3, 0, "q"), (0, 3, 1, "q"),
                (1, 2, 2, "p"), (1, 2, 1, "q"), (0, 1, 0, "p"), (1, 3, 1, "p")]
        ev = EventData(a=[r[0] for r in rows], time=[r[1] for r in rows], event=[r[2] for r in rows],
                       covariates={"g": [r[3] for r in rows]})
        fit = cox_fit_design(ev, 1, "g")
        subjects = [(np.array([r[0], r[3] == "q"], float), r[1], r[2]) for r in rows]

        def loglik(beta):
            total = 0.0
            for k in sorted({s[1] for s in subjects if s[2] == 1}):
                ev_x = [s[0] for s in subjects if s[1] == k and s[2] == 1]
                risk = [s[0] for s in subjects if s[1] > k or (s[1] == k and s[2] != 2)]
                total += sum(float(x @ beta) for x in ev_x)
                total -= len(ev_x) * math.log(sum(math.exp(float(x @ beta)) for x in risk))
            return total

        from scipy.optimize import minimize
        ref = minimize(lambda b: -loglik(b), np.zeros(2), method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 20000})
        assert fit.beta == pytest.approx(ref.x, abs=1e-5)
        assert fit.loglik == pytest.approx(loglik(fit.beta), abs=1e-10)

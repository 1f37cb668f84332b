import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from sievekit import dgp
from sievekit.data import CountTable, TrialData, tabulate
from sievekit.errors import BootstrapFailure, DegenerateCounts, DomainError
from sievekit.estimands import ccs
from sievekit.uncertainty import (
    BootstrapPlan,
    bootstrap_ci,
    ccs_ci,
    ccs_log_variance,
    eet_trinomial_ci,
    f_cdf,
    f_quantile,
    katz_ci,
    katz_log_variance,
)


class TestFQuantile:
    def test_median_equal_dof(self):
        assert f_quantile(0.5, 7, 7) == pytest.approx(1.0, abs=1e-10)

    def test_table_value(self):
        x = f_quantile(0.95, 2, 10)
        assert x == pytest.approx(4.1028, abs=5e-5)
        assert float(oracles.f_cdf_quad(x, 2, 10)) == pytest.approx(0.95, abs=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.01, 0.99), st.integers(1, 60), st.integers(1, 60))
    def test_roundtrip(self, p, d1, d2):
        assert f_cdf(f_quantile(p, d1, d2), d1, d2) == pytest.approx(p, abs=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.05, 0.9), st.floats(0.01, 0.09), st.integers(1, 30), st.integers(1, 30))
    def test_monotone(self, p, dp, d1, d2):
        assert f_quantile(p, d1, d2) < f_quantile(p + dp, d1, d2)

    def test_bad_dof(self):
        with pytest.raises(DomainError):
            f_quantile(0.5, 0, 3)


class TestKatz:
    def test_symmetric_counts_center_on_one(self):
        lo, hi = katz_ci(1.0, (30, 500, 30, 500))
        assert math.log(lo) == pytest.approx(-math.log(hi))

    def test_closed_form(self):
        got = katz_ci(0.5, (50, 1000, 100, 1000), 0.05)
        want = oracles.katz_interval(50, 1000, 100, 1000, 0.05)
        assert got == pytest.approx(want, rel=1e-10)

    def test_alpha_to_one_collapses(self):
        lo, hi = katz_ci(0.5, (50, 1000, 100, 1000), 1 - 1e-12)
        assert lo == pytest.approx(0.5, rel=1e-9) and hi == pytest.approx(0.5, rel=1e-9)

    @pytest.mark.parametrize("cells", [(0, 10, 3, 10), (10, 10, 3, 10)])
    def test_boundary_cells(self, cells):
        with pytest.raises(DegenerateCounts):
            katz_log_variance(*cells)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.01, 0.9), st.floats(0.01, 0.9), st.integers(10, 1000))
    def test_width_shrinks_with_n(self, p1, p0, n):
        width = lambda m: math.log(katz_ci(p1 / p0, (p1 * m, m, p0 * m, m))[1]) * 2
        assert width(2 * n) < width(n)


counts_strategy = st.tuples(*[st.integers(1, 400) for _ in range(6)])


class TestCcsInterval:
    def test_symmetric_counts(self):
        t = CountTable.from_counts((800, 100, 100), (800, 100, 100))
        for method in ("sum", "decomposition"):
            lo, hi = ccs_ci(t, method=method)
            assert math.log(lo) == pytest.approx(-math.log(hi))

    def test_decomposition_not_wider_on_d1_draw(self):
        t = tabulate(dgp.sample(dgp.builtin_scenario("d1"), 5000, 3))
        assert ccs_log_variance(t, "decomposition") <= ccs_log_variance(t, "sum")

    def test_exposure_conditional_is_sum_of_slices(self):
        t = tabulate(dgp.sample(dgp.builtin_scenario("d1"), 20000, 5))
        ne = t.n_exposure
        want = 0.0
        for j in (1, 2):
            x1, n1 = ne[1, j, j], ne[1, j].sum()
            x0, n0 = ne[0, j, j], ne[0, j].sum()
            want += (1 - x1 / n1) / x1 + (1 - x0 / n0) / x0
        assert ccs_log_variance(t, mode="exposure_conditional") == pytest.approx(want, rel=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(counts_strategy)
    def test_sum_contains_decomposition(self, c):
        t = CountTable.from_counts(c[:3], c[3:])
        lo_s, hi_s = ccs_ci(t, method="sum")
        lo_d, hi_d = ccs_ci(t, method="decomposition")
        assert lo_s <= lo_d * (1 + 1e-12) and hi_d <= hi_s * (1 + 1e-12)
        point = ccs(t).point
        assert lo_d <= point <= hi_d


class TestTrinomial:
    def test_equal_counts_contain_one(self):
        lo, hi = eet_trinomial_ci(7, 7)
        assert lo < 1 < hi

    def test_matches_oracle(self):
        assert eet_trinomial_ci(4, 2, 0.05) == pytest.approx(oracles.trinomial_interval(4, 2, 0.05), rel=1e-9)

    def test_zero_count(self):
        with pytest.raises(DegenerateCounts):
            eet_trinomial_ci(0, 4)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 200), st.integers(1, 200), st.sampled_from([0.01, 0.05, 0.1]))
    def test_swap_equivariance(self, y1, y2, alpha):
        lo, hi = eet_trinomial_ci(y1, y2, alpha)
        lo2, hi2 = eet_trinomial_ci(y2, y1, alpha)
        assert lo2 == pytest.approx(1 / hi, rel=1e-9) and hi2 == pytest.approx(1 / lo, rel=1e-9)
        assert lo <= y1 / y2 <= hi


def mean_stat(d):
    return float(np.average(d.y, weights=d.weight))


class TestBootstrap:
    data = TrialData(a=np.zeros(50), y=np.arange(50) % 3)

    def test_single_replicate(self):
        res = bootstrap_ci(self.data, mean_stat, BootstrapPlan(1, 9))
        assert res.lo == res.hi == res.values[0]

    def test_repeatable(self):
        plan = BootstrapPlan(300, 12)
        a, b = bootstrap_ci(self.data, mean_stat, plan), bootstrap_ci(self.data, mean_stat, plan)
        assert (a.lo, a.hi) == (b.lo, b.hi)

    @pytest.mark.parametrize("workers", [2, 3, 8])
    def test_lane_invariant(self, workers):
        plan = BootstrapPlan(257, 5)
        one = bootstrap_ci(self.data, mean_stat, plan, workers=1)
        many = bootstrap_ci(self.data, mean_stat, plan, workers=workers)
        assert one.values.tobytes() == many.values.tobytes()

    def test_degenerate_replicates_counted(self):
        def stat(d):
            if d.weight[0] > 17:  # first collapsed pattern holds 17 of 50 rows
                raise DegenerateCounts("x")
            return 1.0

        res = bootstrap_ci(self.data, stat, BootstrapPlan(400, 1))
        assert res.degenerate > 0 and res.used + res.degenerate == 400

    def test_all_degenerate(self):
        with pytest.raises(BootstrapFailure):
            bootstrap_ci(self.data, lambda d: math.nan, BootstrapPlan(5, 1))

    def test_resampling_law(self):
        # Resampled totals preserve n and the mean of replicate means tracks the sample mean.
        res = bootstrap_ci(self.data, mean_stat, BootstrapPlan(2000, 3))
        assert res.values.mean() == pytest.approx(mean_stat(self.data), abs=0.01)

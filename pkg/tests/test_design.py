import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtr, ndtri

from npsurv.design import (FISHER, INVERSE_NORMAL, StageDecision,
                           TwoStageDesign, bivariate_normal_cdf, combine,
                           conditional_error, crossing_probability, decide,
                           design_from_config, design_to_config, level_check,
                           obf_bounds, pocock_bounds)

EQ = 1.0 / math.sqrt(2.0)


def obf_design(alpha=0.025, alpha0=1.0, t1=5.0, t2=8.0):
    a1, c = obf_bounds(alpha)
    return TwoStageDesign(alpha=alpha, alpha1=a1, alpha0=alpha0, c=c,
                          t1=t1, t2=t2)


class TestCombine:
    def test_inverse_normal_median(self):
        d = obf_design()
        assert combine(d, 0.5, 0.5) == pytest.approx(0.5, abs=1e-12)

    def test_fisher_product(self):
        d = TwoStageDesign(alpha=0.025, alpha1=0.001, alpha0=0.5, c=0.005,
                           combination=FISHER)
        assert combine(d, 0.1, 0.2) == pytest.approx(0.02, abs=1e-15)

    def test_inverse_normal_tail_value(self):
        d = obf_design()
        expected = 1.0 - ndtr(2.0 * ndtri(0.95) / math.sqrt(2.0))
        assert combine(d, 0.05, 0.05) == pytest.approx(expected, abs=1e-12)
        assert combine(d, 0.05, 0.05) == pytest.approx(0.01001, abs=1e-5)

    def test_boundary_values_clamped(self):
        d = obf_design()
        assert 0.0 < combine(d, 0.0, 0.5) < 1.0
        assert 0.0 < combine(d, 1.0, 1.0) <= 1.0
        assert math.isfinite(combine(d, 0.0, 0.0))

    @settings(max_examples=120, deadline=None)
    @given(st.floats(0.001, 0.999), st.floats(0.001, 0.999),
           st.floats(0.001, 0.999), st.floats(0.001, 0.999))
    def test_monotone_in_both_arguments(self, p1a, p1b, p2a, p2b):
        for comb in (INVERSE_NORMAL, FISHER):
            d = TwoStageDesign(alpha=0.025, alpha1=0.002, alpha0=1.0, c=0.02,
                               combination=comb)
            lo1, hi1 = sorted((p1a, p1b))
            lo2, hi2 = sorted((p2a, p2b))
            assert combine(d, lo1, lo2) <= combine(d, hi1, lo2) + 1e-12
            assert combine(d, lo1, lo2) <= combine(d, lo1, hi2) + 1e-12


class TestBounds:
    def test_obf_reproduces_published_bounds(self):
        a1, c = obf_bounds(0.025, (EQ, EQ))
        assert a1 == pytest.approx(0.002583, abs=1e-4)
        assert c == pytest.approx(0.023996, abs=1e-4)

    def test_pocock_equal_bounds_and_level(self):
        a1, c = pocock_bounds(0.025, (EQ, EQ))
        assert a1 == pytest.approx(c, abs=1e-12)
        d = TwoStageDesign(alpha=0.025, alpha1=a1, alpha0=1.0, c=c)
        assert level_check(d) == pytest.approx(0.025, abs=1e-6)

    def test_degenerate_second_stage(self):
        a1, c = obf_bounds(0.025, (1.0, 0.0))
        assert a1 == pytest.approx(0.025, abs=1e-12)

    def test_level_equation_across_alphas(self):
        for alpha in (0.01, 0.025, 0.05):
            for solver in (obf_bounds, pocock_bounds):
                a1, c = solver(alpha)
                d = TwoStageDesign(alpha=alpha, alpha1=a1, alpha0=1.0, c=c)
                assert level_check(d) == pytest.approx(alpha, abs=1e-6)


class TestLevelCheck:
    def test_zero_critical_value_gives_alpha1(self):
        d = TwoStageDesign(alpha=0.025, alpha1=0.01, alpha0=0.6, c=0.0)
        assert level_check(d) == pytest.approx(0.01, abs=1e-12)

    def test_fisher_closed_form(self):
        alpha1, alpha0, c = 0.01, 0.5, 0.008
        d = TwoStageDesign(alpha=0.025, alpha1=alpha1, alpha0=alpha0, c=c,
                           combination=FISHER)
        expected = alpha1 + c * (math.log(alpha0) - math.log(alpha1))
        assert level_check(d) == pytest.approx(expected, abs=1e-9)


class TestConditionalError:
    def test_closed_form_matches_bisection(self):
        d = obf_design()
        rng = np.random.default_rng(1)
        for p1 in rng.uniform(d.alpha1 + 1e-6, 0.999, 100):
            a2 = conditional_error(d, p1)
            lo, hi = 0.0, 1.0
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if combine(d, p1, mid) <= d.c:
                    lo = mid
                else:
                    hi = mid
            assert a2 == pytest.approx(lo, abs=1e-10)

    def test_defining_property(self):
        d = obf_design()
        rng = np.random.default_rng(5)
        for p1 in rng.uniform(d.alpha1 + 1e-5, 0.99, 100):
            a2 = conditional_error(d, p1)
            assert combine(d, p1, a2) == pytest.approx(d.c, abs=1e-10)

    def test_half_at_matched_quantile(self):
        d = TwoStageDesign(alpha=0.025, alpha1=0.001, alpha0=1.0, c=0.02)
        z1 = -ndtri(d.c) / d.w1
        p1 = float(ndtr(-z1))
        assert d.alpha1 < p1 < d.alpha0
        assert conditional_error(d, p1) == pytest.approx(0.5, abs=1e-12)

    def test_outside_continuation_region_rejected(self):
        d = obf_design(alpha0=0.5)
        with pytest.raises(ValueError):
            conditional_error(d, d.alpha1 / 2)
        with pytest.raises(ValueError):
            conditional_error(d, 0.7)

    def test_nonincreasing_in_p1(self):
        d = obf_design()
        grid = np.linspace(d.alpha1 + 1e-6, 0.999, 50)
        vals = [conditional_error(d, p) for p in grid]
        assert np.all(np.diff(vals) <= 1e-12)

    def test_fisher_conditional_error(self):
        d = TwoStageDesign(alpha=0.025, alpha1=0.005, alpha0=0.8, c=0.01,
                           combination=FISHER)
        assert conditional_error(d, 0.5) == pytest.approx(0.02, abs=1e-15)
        assert conditional_error(d, 0.009) == 1.0


class TestDecide:
    def test_interim_bound_inclusive(self):
        d = obf_design()
        assert decide(d, d.alpha1) is StageDecision.REJECT_AT_INTERIM

    def test_no_futility_continues_at_large_p1(self):
        d = obf_design()
        assert decide(d, 0.9) is StageDecision.CONTINUE
        assert decide(d, 0.5, 1e-8) is StageDecision.REJECT_AT_FINAL

    def test_futility_bound_inclusive(self):
        d = obf_design(alpha0=0.5)
        assert decide(d, 0.9) is StageDecision.FUTILITY_STOP
        assert decide(d, 0.5) is StageDecision.FUTILITY_STOP

    def test_final_decisions(self):
        d = obf_design()
        assert decide(d, 0.1, 0.9) is StageDecision.ACCEPT_AT_FINAL
        assert decide(d, 0.01, 0.001) is StageDecision.REJECT_AT_FINAL


class TestNormalKernels:
    def test_independent_case_is_exact_product(self):
        assert bivariate_normal_cdf(0.3, -1.2, 0.0) == \
            float(ndtr(0.3) * ndtr(-1.2))

    def test_correlated_kernel_against_monte_carlo(self):
        rng = np.random.default_rng(123)
        n = 10 ** 6
        rho = 0.6
        z1 = rng.standard_normal(n)
        z2 = rho * z1 + math.sqrt(1 - rho ** 2) * rng.standard_normal(n)
        for a, b in ((0.5, 0.0), (-0.3, 1.0)):
            est = np.mean((z1 <= a) & (z2 <= b))
            se = math.sqrt(est * (1 - est) / n)
            assert abs(bivariate_normal_cdf(a, b, rho) - est) <= 3 * se

    def test_null_crossing_probability_is_level(self):
        d = obf_design()
        assert crossing_probability(d) == pytest.approx(0.025, abs=1e-7)


class TestConfig:
    def test_roundtrip(self):
        d = obf_design()
        d2 = design_from_config(design_to_config(d))
        assert d2 == d

    def test_obf_config_builds_bounds(self):
        cfg = {"alpha": 0.025, "alpha0": 1.0,
               "combination": {"type": INVERSE_NORMAL, "w1": EQ, "w2": EQ},
               "bounds": {"type": "obf"}, "t1": 5.0, "t2": 8.0}
        d = design_from_config(cfg)
        assert d.alpha1 == pytest.approx(0.002583, abs=1e-4)

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValueError):
            design_from_config({"alpha": 0.025, "nonsense": 1})
        with pytest.raises(ValueError):
            design_from_config({"alpha": 0.025, "bounds": {"type": "obf",
                                                           "oops": 2}})

    def test_invalid_weights_rejected(self):
        with pytest.raises(ValueError):
            TwoStageDesign(alpha=0.025, alpha1=0.002, alpha0=1.0, c=0.02,
                           w1=0.9, w2=0.9)

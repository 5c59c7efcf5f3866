import math

import numpy as np
import pytest
from scipy import stats

from npsurv.dataset import kaplan_meier, snapshot
from npsurv.weights import (WeightSpec, ZeroInformationError, covariance_matrix,
                            event_table, standardized_increment, weight_value,
                            weight_values_at_events, wlr_statistic,
                            EmptyGroupsError)
from helpers import logrank_oracle, random_dataset, simple_dataset


def four_subject_fixture():
    # group-1 events at 1 and 2, group-0 events at 3 and 4
    return simple_dataset([
        (0.0, 3.0, math.inf, 0),
        (0.0, 4.0, math.inf, 0),
        (0.0, 1.0, math.inf, 1),
        (0.0, 2.0, math.inf, 1),
    ])


class TestWeightSpec:
    def test_parse_roundtrip(self):
        for text in ("fh:0,0", "fh:1,0", "fh:0.5,2", "modest:12"):
            assert str(WeightSpec.parse(text)) == text

    def test_invalid_specs(self):
        with pytest.raises(ValueError):
            WeightSpec.fh(-1, 0)
        with pytest.raises(ValueError):
            WeightSpec.modest(-1)
        with pytest.raises(ValueError):
            WeightSpec.parse("fh:1")


class TestWeightValue:
    def test_classical_logrank_weight_is_one(self):
        ds = four_subject_fixture()
        km = kaplan_meier(snapshot(ds, 10.0))
        assert weight_value(WeightSpec.fh(0, 0), km, 1.0) == 1.0
        assert weight_value(WeightSpec.fh(0, 0), km, 3.5) == 1.0

    def test_rho_weight_uses_left_limit_cdf(self):
        ds = four_subject_fixture()
        km = kaplan_meier(snapshot(ds, 10.0))
        # F(2-) = 1 - S(1) = 0.25
        assert weight_value(WeightSpec.fh(1, 0), km, 2.0) == pytest.approx(0.25)

    def test_modest_zero_threshold_is_classical(self):
        ds = four_subject_fixture()
        km = kaplan_meier(snapshot(ds, 10.0))
        for s in (0.5, 1.5, 3.5):
            assert weight_value(WeightSpec.modest(0.0), km, s) == pytest.approx(1.0)

    def test_modest_weights_bounded_by_threshold(self):
        ds = four_subject_fixture()
        km = kaplan_meier(snapshot(ds, 10.0))
        w_late = weight_value(WeightSpec.modest(2.0), km, 3.5)
        assert w_late == pytest.approx(1.0 / km.left_limit(2.0))


class TestWlrStatistic:
    def test_mirror_symmetry_gives_zero(self):
        ds = simple_dataset([
            (0.0, 1.0, math.inf, 0), (0.0, 2.0, math.inf, 0),
            (0.0, 1.0, math.inf, 1), (0.0, 2.0, math.inf, 1),
        ])
        res = wlr_statistic(snapshot(ds, 10.0), WeightSpec.fh(0, 0))
        assert res.statistic == pytest.approx(0.0)

    def test_four_subject_hand_computation(self):
        # events at 1,2 from group 1 and 3,4 from group 0:
        #   s=1: share1=2/4, term = 1/2 - 1 = -1/2
        #   s=2: share1=1/3, term = 1/3 - 1 = -2/3
        #   s=3,4: share1=0, group-0 events, terms 0
        # T = (-7/6)/sqrt(4), variance = (1/4 + 2/9)/4
        res = wlr_statistic(snapshot(four_subject_fixture(), 10.0),
                            WeightSpec.fh(0, 0))
        assert res.statistic == pytest.approx(-7.0 / 12.0, abs=1e-15)
        assert res.variance == pytest.approx(17.0 / 144.0, abs=1e-15)
        assert res.events_used == 4

    def test_matches_textbook_logrank_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            ds = random_dataset(rng, n_per_group=25, accrual=1.0,
                                rate0=0.8, rate1=0.4, dropout_rate=0.1)
            snap = snapshot(ds, 3.0)
            if snap.n_events == 0 or (snap.z == 0).sum() == 0 or (snap.z == 1).sum() == 0:
                continue
            res = wlr_statistic(snap, WeightSpec.fh(0, 0))
            o_minus_e, var = logrank_oracle(snap.x, snap.delta, snap.z)
            n = snap.n_total
            assert res.statistic == pytest.approx(o_minus_e / math.sqrt(n), rel=1e-12)
            assert res.variance == pytest.approx(var / n, rel=1e-12)

    def test_single_group_errors(self):
        ds = simple_dataset([(0.0, 1.0, math.inf, 0), (0.0, 2.0, math.inf, 0)])
        with pytest.raises(EmptyGroupsError):
            wlr_statistic(snapshot(ds, 10.0), WeightSpec.fh(0, 0))

    def test_scale_invariance_of_standardization(self):
        rng = np.random.default_rng(9)
        ds = random_dataset(rng, n_per_group=30, rate0=0.7, rate1=0.4)
        snap = snapshot(ds, 5.0)
        table = event_table(snap)
        q = weight_values_at_events(table, WeightSpec.fh(1, 1))
        share1 = table.at_risk_1 / table.at_risk
        for c in (0.25, 3.0, 17.5):
            t0 = (q * (share1 - table.z)).sum() / math.sqrt(table.n_total)
            v0 = (q ** 2 * share1 * (1 - share1)).sum() / table.n_total
            t1 = (c * q * (share1 - table.z)).sum() / math.sqrt(table.n_total)
            v1 = ((c * q) ** 2 * share1 * (1 - share1)).sum() / table.n_total
            assert t1 / math.sqrt(v1) == pytest.approx(t0 / math.sqrt(v0), rel=1e-13)


class TestCovariance:
    def test_classical_variance_oracle_no_ties(self):
        rng = np.random.default_rng(21)
        ds = random_dataset(rng, n_per_group=30, rate0=0.5, rate1=0.5)
        snap = snapshot(ds, 6.0)
        sigma = covariance_matrix(snap, [WeightSpec.fh(0, 0)])
        _, var = logrank_oracle(snap.x, snap.delta, snap.z)
        assert sigma.shape == (1, 1)
        assert sigma[0, 0] == pytest.approx(var / snap.n_total, rel=1e-12)

    def test_duplicated_specs_give_rank_one(self):
        rng = np.random.default_rng(2)
        ds = random_dataset(rng, n_per_group=20)
        snap = snapshot(ds, 4.0)
        sigma = covariance_matrix(snap, [WeightSpec.fh(0, 0), WeightSpec.fh(0, 0)])
        assert np.allclose(sigma, sigma[0, 0])
        assert np.linalg.matrix_rank(sigma, tol=1e-12) == 1

    def test_no_events_zero_matrix(self):
        ds = simple_dataset([(0.0, math.inf, 1.0, 0), (0.0, math.inf, 1.0, 1)])
        sigma = covariance_matrix(snapshot(ds, 10.0),
                                  [WeightSpec.fh(0, 0), WeightSpec.fh(1, 0)])
        assert np.all(sigma == 0.0)

    def test_positive_semidefinite_on_random_panels(self):
        rng = np.random.default_rng(33)
        specs = [WeightSpec.fh(0, 0), WeightSpec.fh(1, 0),
                 WeightSpec.fh(0, 1), WeightSpec.fh(1, 1)]
        for n in (10, 50, 250):
            ds = random_dataset(rng, n_per_group=n, accrual=2.0, dropout_rate=0.1)
            sigma = covariance_matrix(snapshot(ds, 4.0), specs)
            eig = np.linalg.eigvalsh(sigma)
            assert eig.min() >= -1e-10 * max(eig.max(), 1e-30)

    def test_diagonal_nesting_under_common_entry(self):
        # with simultaneous entry the risk sets at old event times are
        # unchanged by a later look, so frozen-weight diagonals nest
        rng = np.random.default_rng(8)
        ds = random_dataset(rng, n_per_group=40, accrual=0.0, dropout_rate=0.2)
        snap2 = snapshot(ds, 6.0)
        table2 = event_table(snap2)
        for spec in (WeightSpec.fh(0, 0), WeightSpec.fh(1, 1)):
            q = weight_values_at_events(table2, spec)
            share1 = table2.at_risk_1 / table2.at_risk
            terms = q ** 2 * share1 * (1 - share1)
            partial = terms[table2.s <= 3.0].sum()
            assert partial <= terms.sum() + 1e-15


class TestStandardizedIncrement:
    def test_zero_variance_increment_errors(self):
        ds = simple_dataset([
            (0.0, 1.0, math.inf, 0), (0.0, 2.0, math.inf, 1),
        ])
        with pytest.raises(ZeroInformationError):
            standardized_increment(snapshot(ds, 5.0), snapshot(ds, 6.0),
                                   WeightSpec.fh(0, 0))

    def test_empty_first_snapshot_reduces_to_one_stage(self):
        rng = np.random.default_rng(4)
        ds = random_dataset(rng, n_per_group=30, accrual=1.0)
        full = wlr_statistic(snapshot(ds, 5.0), WeightSpec.fh(0, 0))
        inc = standardized_increment(snapshot(ds, 0.0), snapshot(ds, 5.0),
                                     WeightSpec.fh(0, 0))
        assert inc.z == pytest.approx(full.standardized, rel=1e-13)
        assert inc.p2 == pytest.approx(1 - stats.norm.cdf(inc.z), abs=1e-13)

    def test_increment_nearly_independent_of_first_stage(self):
        rng = np.random.default_rng(17)
        z1s, zincs = [], []
        for _ in range(2000):
            ds = random_dataset(rng, n_per_group=200, accrual=6.0,
                                rate0=0.36, rate1=0.36)
            s1, s2 = snapshot(ds, 5.0), snapshot(ds, 8.0)
            r1 = wlr_statistic(s1, WeightSpec.fh(0, 0))
            if not np.isfinite(r1.standardized):
                continue
            inc = standardized_increment(s1, s2, WeightSpec.fh(0, 0))
            z1s.append(r1.standardized)
            zincs.append(inc.z)
        corr = np.corrcoef(z1s, zincs)[0, 1]
        assert abs(corr) < 0.05

    def test_null_statistic_is_standard_normal(self):
        rng = np.random.default_rng(29)
        zs = []
        for _ in range(5000):
            ds = random_dataset(rng, n_per_group=200, accrual=6.0,
                                rate0=0.36, rate1=0.36)
            res = wlr_statistic(snapshot(ds, 8.0), WeightSpec.fh(0, 0))
            zs.append(res.standardized)
        _, pval = stats.kstest(zs, "norm")
        assert pval > 0.01

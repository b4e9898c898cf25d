from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prevalid.data import Dataset
from prevalid.errors import ValidationError
from prevalid.internal import InternalModelSpec
from prevalid.permutation import (
    PermutationResult,
    permutation_p_value,
    permutation_test,
    permutation_tests,
    summarize_p_values,
)

OLS = InternalModelSpec("ols")


def _linear(n=20, p=3, beta=0.0, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    y = X @ np.full(p, beta) + rng.standard_normal(n)
    return Dataset(y, X, y[:, None] + rng.standard_normal((n, 1)))


class TestCountingRule:
    def test_all_below(self):
        assert permutation_p_value(1.0, np.array([0.5, 0.2, -3.0])) == 0.0

    def test_all_above(self):
        assert permutation_p_value(-1.0, np.array([0.5, 0.2, -1.0])) == 1.0

    def test_ties_count(self):
        assert permutation_p_value(2.0, np.array([2.0, 2.0 * (1 - 1e-14), 1.0, 3.0])) == 0.75

    def test_nan_dropped_from_denominator(self):
        assert permutation_p_value(1.0, np.array([2.0, np.nan, 0.0, np.nan])) == 0.5
        assert np.isnan(permutation_p_value(1.0, np.array([np.nan])))

    @settings(max_examples=100, deadline=None)
    @given(obs=st.floats(-5, 5), vals=st.lists(st.floats(-5, 5), min_size=1, max_size=40))
    def test_matches_plain_count_away_from_ties(self, obs, vals):
        v = np.array(vals)
        if np.any(np.abs(v - obs) < 1e-9):
            return
        assert permutation_p_value(obs, v) == np.mean(v >= obs)


class TestPermutationTest:
    def test_perfect_predictor_p_zero(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((30, 1))
        y = 3 * X[:, 0] + 0.01 * rng.standard_normal(30)
        res = permutation_test(Dataset(y, X), OLS, K=5, B=100, seed=2)
        assert res.p_value == 0.0 and res.valid

    def test_deterministic_and_worker_invariant(self):
        ds = _linear(seed=3)
        a = permutation_tests(ds, OLS, K=5, B=40, seed=7)
        b = permutation_tests(ds, OLS, K=5, B=40, seed=7, workers=2)
        for k in a:
            assert a[k].to_json() == b[k].to_json()
        c = permutation_tests(ds, OLS, K=5, B=40, seed=8)
        assert not np.array_equal(a["t_or_z"].permuted, c["t_or_z"].permuted)

    def test_statistics_share_permutations(self):
        ds = _linear(seed=4)
        res = permutation_tests(ds, OLS, K=5, B=30, seed=1)
        # t and coefficient move together when only the PV column changes between rows
        assert set(res) == {"coefficient", "t_or_z", "deviance"}
        np.testing.assert_allclose(res["deviance"].permuted, res["t_or_z"].permuted ** 2, rtol=1e-10)

    def test_fixed_folds_option(self):
        ds = _linear(seed=5)
        a = permutation_test(ds, OLS, K=4, B=20, seed=0, redraw_folds=False)
        assert not a.redraw_folds
        assert 0.0 <= a.p_value <= 1.0

    def test_reuse_method_allowed(self):
        assert 0.0 <= permutation_test(_linear(seed=6), OLS, K=1, B=20).p_value <= 1.0

    def test_null_p_values_roughly_uniform(self):
        p = [permutation_test(_linear(n=12, seed=100 + i), OLS, K=4, B=50, seed=i).p_value for i in range(150)]
        assert 0.4 < np.mean(p) < 0.6

    def test_bad_arguments(self):
        ds = _linear()
        with pytest.raises(ValidationError):
            permutation_test(ds, OLS, B=0)
        with pytest.raises(ValidationError, match="unknown statistic"):
            permutation_tests(ds, OLS, statistic_kinds=("aic",), B=5)

    def test_logistic_pipeline(self):
        rng = np.random.default_rng(9)
        y = np.repeat([0.0, 1.0], 15)
        X = rng.standard_normal((30, 40))
        X[15:, :3] += 1.5
        Z = np.where(rng.random((30, 1)) < 0.3, 1 - y[:, None], y[:, None])
        res = permutation_tests(Dataset(y, X, Z), InternalModelSpec("lda_top_g", g=3), "logistic", K=5, B=40, seed=0)
        assert res["deviance"].observed >= 0
        assert res["t_or_z"].observed_fit.kind == "logistic"


class TestResult:
    def _result(self, n_failed):
        return PermutationResult("t_or_z", 1.0, np.array([0.0] * 95 + [np.nan] * 5), 0.0, 100, 0, n_failed)

    def test_invalid_flag(self):
        assert self._result(5).valid
        assert not self._result(6).valid

    def test_json_nan_as_null(self):
        d = json.loads(self._result(5).to_json())
        assert d["permuted"][-1] is None and d["valid"]

    def test_summarize(self):
        s = summarize_p_values([0.001, 0.02, 0.07, 0.5, np.nan])
        assert s["count"] == 4
        assert s["mean"] == pytest.approx((0.001 + 0.02 + 0.07 + 0.5) / 4)
        assert (s["pct_below_0.01"], s["pct_below_0.05"], s["pct_below_0.1"]) == (25.0, 50.0, 75.0)

    def test_summarize_strict_inequality(self):
        assert summarize_p_values([0.05])["pct_below_0.05"] == 0.0

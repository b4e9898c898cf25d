from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prevalid.errors import SingularDesignError, ValidationError
from prevalid.internal import (
    InternalModelSpec,
    abs_correlations,
    fit_corr_centroid,
    fit_internal,
    fit_lasso_l,
    fit_lda_top_g,
    fit_ols,
    fit_plr_cv,
    predict,
    top_correlated,
)


def _clusters(n=40, p=2, shift=6.0, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat([0.0, 1.0], n // 2)
    X = rng.standard_normal((n, p))
    X[y == 1] += shift
    return X, y


def _lars_knot(X, y, l):
    """Coefficients at the knot with l nonzeros right before the next entry (sklearn path)."""
    from sklearn.linear_model import lars_path

    Xc, yc = X - X.mean(0), y - y.mean()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, _, coefs = lars_path(Xc, yc, method="lasso")
    nz = np.abs(coefs) > 1e-12
    for k in range(coefs.shape[1] - 1):
        new = nz[:, k + 1] & ~nz[:, k]
        if nz[:, k].sum() == l and new.any():
            return coefs[:, k]
    return None


class TestSpec:
    def test_json_round_trip(self):
        spec = InternalModelSpec("plr_cv", sparsity_grid=[5, 10], inner_folds=3)
        back = InternalModelSpec.from_json(spec.to_json())
        assert back == spec

    def test_lasso_defaults(self):
        spec = InternalModelSpec("lasso_l", l=3)
        assert spec.fit_intercept is True and spec.normalize is False

    @pytest.mark.parametrize(
        "kw",
        [
            {"kind": "nope"},
            {"kind": "lasso_l"},
            {"kind": "lda_top_g", "g": 0},
            {"kind": "corr_centroid", "m_genes": 5},
            {"kind": "plr_cv", "sparsity_grid": []},
            {"kind": "lda_top_g", "g": 2, "lda_output": "prob"},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            InternalModelSpec(**kw)

    def test_unknown_field(self):
        with pytest.raises(ValidationError, match="unknown"):
            InternalModelSpec.from_dict({"kind": "ols", "alpha": 1})

    def test_dimension_check(self):
        with pytest.raises(ValidationError, match="exceeds"):
            InternalModelSpec("lda_top_g", g=20).check_dimensions(10)


class TestOLS:
    def test_orthonormal_design(self):
        rng = np.random.default_rng(1)
        Q, _ = np.linalg.qr(rng.standard_normal((12, 4)))
        y = rng.standard_normal(12)
        np.testing.assert_allclose(fit_ols(Q, y).coef, Q.T @ y, atol=1e-12)

    def test_exact_interpolation(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((20, 4))
        b = np.array([1.5, -2.0, 0.25, 3.0])
        np.testing.assert_allclose(fit_ols(X, X @ b).coef, b, atol=1e-12)

    def test_normal_equations_oracle(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((50, 5))
        y = rng.standard_normal(50)
        oracle = np.linalg.solve(X.T @ X, X.T @ y)
        np.testing.assert_allclose(fit_ols(X, y).coef, oracle, atol=1e-10)

    def test_hat_identity_on_training_rows(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((30, 6))
        y = rng.standard_normal(30)
        H = X @ np.linalg.inv(X.T @ X) @ X.T
        np.testing.assert_allclose(predict(fit_ols(X, y), X), H @ y, atol=1e-10)

    def test_rank_deficient(self):
        X = np.ones((10, 2))
        with pytest.raises(SingularDesignError, match="rank deficient"):
            fit_ols(X, np.arange(10.0))

    def test_intercept(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((25, 2))
        y = 4.0 + X @ [1.0, 2.0]
        m = fit_ols(X, y, fit_intercept=True)
        assert m.intercept == pytest.approx(4.0)


class TestLasso:
    def test_single_dominant_predictor(self):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((20, 8))
        m = fit_lasso_l(X, 3.0 * X[:, 3], 1)
        assert m.selected.tolist() == [3]

    def test_l_equals_p_is_ols(self):
        rng = np.random.default_rng(7)
        X = rng.standard_normal((40, 4))
        y = X @ [1.0, -1.0, 0.5, 2.0] + rng.standard_normal(40)
        m = fit_lasso_l(X, y, 4)
        o = fit_ols(X, y, fit_intercept=True)
        np.testing.assert_allclose(m.coef, o.coef, atol=1e-9)
        assert m.intercept == pytest.approx(o.intercept, abs=1e-9)

    def test_matches_lars_path_oracle(self):
        rng = np.random.default_rng(8)
        X = rng.standard_normal((30, 100))
        y = X[:, :5] @ np.ones(5) + rng.standard_normal(30)
        m = fit_lasso_l(X, y, 5)
        ref = _lars_knot(X, y, 5)
        np.testing.assert_allclose(m.coef, ref, atol=1e-9)
        assert set(m.selected) == set(np.flatnonzero(ref))

    def test_normalized_variant_matches_scaled_oracle(self):
        rng = np.random.default_rng(9)
        X = rng.standard_normal((15, 30)) * rng.uniform(0.1, 5, 30)
        y = rng.standard_normal(15)
        m = fit_lasso_l(X, y, 4, normalize=True)
        norms = np.linalg.norm(X - X.mean(0), axis=0)
        ref = _lars_knot(X / norms, y, 4)
        np.testing.assert_allclose(m.coef, ref / norms, atol=1e-9)

    def test_tie_goes_to_lower_index(self):
        x = np.array([1.0, -1.0, 2.0, -2.0, 0.5, -0.5])
        X = np.column_stack([x, x, np.ones(6)])
        m = fit_lasso_l(X, x, 1)
        assert m.selected.tolist() == [0]

    def test_zero_response(self):
        rng = np.random.default_rng(10)
        m = fit_lasso_l(rng.standard_normal((10, 5)), np.full(10, 2.0), 2)
        assert m.flags["degenerate"] and not np.any(m.coef)
        np.testing.assert_allclose(predict(m, np.zeros((1, 5))), [2.0])

    def test_unreachable_l(self):
        rng = np.random.default_rng(11)
        with pytest.raises(ValidationError, match="reachable"):
            fit_lasso_l(rng.standard_normal((6, 20)), rng.standard_normal(6), 6)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**31), n=st.integers(6, 25), p=st.integers(2, 40), data=st.data())
    def test_exactly_l_nonzero(self, seed, n, p, data):
        l = data.draw(st.integers(1, min(p, n - 1)))
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((n, p))
        y = rng.standard_normal(n)
        m = fit_lasso_l(X, y, l)
        assert np.count_nonzero(m.coef) == l
        ref = _lars_knot(X, y, l)
        if ref is not None:
            np.testing.assert_allclose(m.coef, ref, atol=1e-7)


class TestLDA:
    def test_separable_clusters(self):
        X, y = _clusters(p=2)
        m = fit_lda_top_g(X, y, 2)
        assert np.all(predict(m, X) == y)

    def test_g1_brute_force_scan(self):
        rng = np.random.default_rng(12)
        X = rng.standard_normal((30, 50))
        y = np.repeat([0.0, 1.0], 15)
        brute = max(range(50), key=lambda j: abs(np.corrcoef(X[:, j], y)[0, 1]))
        assert fit_lda_top_g(X, y, 1).selected.tolist() == [brute]

    def test_selection_frequency_under_null(self):
        rng = np.random.default_rng(13)
        p, g, reps = 20, 4, 1000
        counts = np.zeros(p)
        y = np.repeat([0.0, 1.0], 10)
        for _ in range(reps):
            counts[fit_lda_top_g(rng.standard_normal((20, p)), y, g).selected] += 1
        freq = counts / reps
        se = np.sqrt(g / p * (1 - g / p) / reps)
        assert np.all(np.abs(freq - g / p) < 4.5 * se)

    def test_class_means_classified_to_own_class(self):
        X, y = _clusters(n=40, p=3, shift=1.0, seed=14)
        m = fit_lda_top_g(X, y, 3)
        means = np.vstack([X[y == 0].mean(0), X[y == 1].mean(0)])
        assert predict(m, means).tolist() == [0.0, 1.0]

    def test_ridge_when_singular(self):
        X, y = _clusters(n=8, p=10, shift=2.0, seed=15)
        X[:, 1] = X[:, 0]
        m = fit_lda_top_g(X, y, 8)
        assert m.flags["ridge"] > 0

    def test_score_output(self):
        X, y = _clusters(seed=16, shift=1.0)
        m = fit_lda_top_g(X, y, 2, output="score")
        s = predict(m, X)
        assert not set(np.unique(s)) <= {0.0, 1.0}

    def test_shift_invariance(self):
        X, y = _clusters(n=30, p=6, shift=0.8, seed=17)
        shift = np.arange(6) * 100.0
        a = predict(fit_lda_top_g(X, y, 3), X)
        b = predict(fit_lda_top_g(X + shift, y, 3), X + shift)
        assert np.array_equal(a, b)


class TestCorrCentroid:
    def _data(self, seed=18):
        rng = np.random.default_rng(seed)
        y = np.repeat([0.0, 1.0], [20, 15])
        X = rng.standard_normal((35, 40))
        X[y == 0, :10] += 1.0
        return X, y

    def test_fully_permissive(self):
        X, y = self._data()
        m = fit_corr_centroid(X, y, 10, allowed_misclass=15)
        assert m.params["cutoff"] == -1.0 and m.flags["permissive"]
        assert np.all(predict(m, X) == 0)

    def test_zero_allowed_is_max_poor_correlation(self):
        from prevalid.internal import _row_correlations

        X, y = self._data()
        m = fit_corr_centroid(X, y, 10, allowed_misclass=0)
        Xs = (X[:, m.selected] - m.center) / m.scale
        cen = (m.params["centroid"] - m.center) / m.scale
        assert m.params["cutoff"] == pytest.approx(_row_correlations(Xs[y == 1], cen).max())
        assert np.all(predict(m, X[y == 1]) == 1)

    def test_recount_on_training(self):
        X, y = self._data(seed=19)
        m = fit_corr_centroid(X, y, 10, allowed_misclass=1)
        pred = predict(m, X)
        assert np.sum((y == 1) & (pred == 0)) <= 1

    def test_centroid_self_match(self):
        X, y = self._data(seed=20)
        m = fit_corr_centroid(X, y, 10, allowed_misclass=2)
        row = np.zeros((1, 40))
        row[0, m.selected] = m.params["centroid"]
        assert predict(m, row)[0] == 0.0


class TestPLR:
    def test_unconstrained_limit_separable(self):
        X, y = _clusters(n=30, p=2, shift=5.0, seed=21)
        m = fit_plr_cv(X, y, [2], inner_folds=3, seed=0)
        assert m.params["sparsity"] == 2
        assert np.all(predict(m, X) == y)

    def test_winner_in_grid(self):
        rng = np.random.default_rng(22)
        X = rng.standard_normal((40, 60))
        y = (X[:, 0] + X[:, 1] + 0.5 * rng.standard_normal(40) > 0).astype(float)
        grid = [5, 10, 15, 20]
        m = fit_plr_cv(X, y, grid, inner_folds=5, seed=1)
        assert m.params["sparsity"] in grid
        assert np.count_nonzero(m.coef) == m.params["sparsity"] or not m.flags["exact_count"]

    def test_deterministic(self):
        rng = np.random.default_rng(23)
        X = rng.standard_normal((30, 20))
        y = np.repeat([0.0, 1.0], 15)
        a = fit_plr_cv(X, y, [2, 4], seed=5)
        b = fit_plr_cv(X, y, [2, 4], seed=5)
        assert np.array_equal(a.coef, b.coef)

    def test_noise_cv_error_near_chance(self):
        rng = np.random.default_rng(24)
        errs = []
        for r in range(8):
            X = rng.standard_normal((30, 15))
            y = np.repeat([0.0, 1.0], 15)
            m = fit_plr_cv(X, y, [1, 3], inner_folds=5, seed=r)
            errs.append(m.params["cv_error"][m.params["sparsity"]])
        assert 0.25 < np.mean(errs) < 0.65


class TestHelpersAndDispatch:
    def test_correlation_ties_lower_index(self):
        X = np.column_stack([np.arange(5.0), np.arange(5.0), -np.arange(5.0)])
        assert top_correlated(X, np.arange(5.0), 3).tolist() == [0, 1, 2]

    def test_constant_column_zero_correlation(self):
        X = np.column_stack([np.ones(4), np.arange(4.0)])
        np.testing.assert_allclose(abs_correlations(X, np.arange(4.0)), [0.0, 1.0])

    def test_predict_column_mismatch(self):
        m = fit_ols(np.eye(3), np.ones(3))
        with pytest.raises(ValidationError, match="columns"):
            predict(m, np.ones((2, 4)))

    @pytest.mark.parametrize(
        "spec",
        [
            InternalModelSpec("ols"),
            InternalModelSpec("lasso_l", l=2),
            InternalModelSpec("lda_top_g", g=2),
            InternalModelSpec("corr_centroid", m_genes=3, allowed_misclass=1),
            InternalModelSpec("plr_cv", sparsity_grid=[1, 2], inner_folds=3),
        ],
    )
    def test_classifier_outputs(self, spec):
        X, y = _clusters(n=24, p=4, shift=1.5, seed=25)
        pred = predict(fit_internal(spec, X, y, rng=np.random.default_rng(0)), X)
        assert pred.shape == (24,)
        if spec.is_classifier:
            assert set(np.unique(pred)) <= {0.0, 1.0}

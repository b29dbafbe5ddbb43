import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from panelardl.design import DesignMatrix, absorb_two_way
from panelardl.errors import EstimationError
from panelardl.estimator import FitResult, delta_method, fit_ols, numerical_gradient, regression_table

from conftest import random_unbalanced_design


def plain_design(X, y, firms=None):
    X = np.asarray(X, float).reshape(len(y), -1)
    n = len(y)
    return DesignMatrix(
        response=np.asarray(y, float),
        regressors=X,
        labels=tuple(f"b{j}" for j in range(X.shape[1])),
        row_firm=np.asarray(firms if firms is not None else np.arange(n) // 2),
        row_quarter=np.arange(n),
        row_industry=np.zeros(n, dtype=int),
        column_groups={},
    )


def fixed_fit(b, V):
    labels = [f"b{j}" for j in range(len(b))]
    return FitResult(
        coefficients=pd.Series(b, index=labels),
        vcov=pd.DataFrame(V, index=labels, columns=labels),
        ssr=1.0, nobs=100, n_firms=10, n_quarters=10, dof=80,
        residuals=np.zeros(100), vcov_kind="classical",
    )


class TestFitOLS:
    def test_column_equal_to_response(self):
        y = np.array([1.0, 3.0, -2.0, 5.0])
        fit = fit_ols(plain_design(y, y), vcov_kind="classical")
        assert fit.coefficients["b0"] == pytest.approx(1.0)
        assert fit.ssr == pytest.approx(0.0, abs=1e-24)

    def test_hand_solved_bivariate(self):
        # x = 1..5, y = (2, 4, 5, 4, 5): slope 0.6, intercept 2.2 from the normal equations
        x = np.arange(1, 6, dtype=float)
        y = np.array([2.0, 4.0, 5.0, 4.0, 5.0])
        fit = fit_ols(plain_design(np.column_stack([np.ones(5), x]), y), vcov_kind="classical")
        np.testing.assert_allclose(fit.coefficients, [2.2, 0.6], atol=1e-12)
        assert fit.ssr == pytest.approx(2.4)
        # classical variance of the slope: s^2 / Sxx with s^2 = 2.4 / 3, Sxx = 10
        assert fit.std_errors["b1"] == pytest.approx(np.sqrt(0.08))

    def test_rank_deficiency_lists_columns(self, rng):
        x = rng.normal(size=20)
        with pytest.raises(EstimationError, match="b"):
            fit_ols(plain_design(np.column_stack([x, 2 * x]), rng.normal(size=20)))

    def test_dof_counts_absorbed_effects(self, rng):
        dm = absorb_two_way(random_unbalanced_design(rng, 6, 8))
        fit = fit_ols(dm)
        assert fit.dof == dm.nobs - 3 - (dm.n_firms + dm.n_quarters - 1)

    def test_residual_orthogonality_and_psd(self, rng):
        dm = absorb_two_way(random_unbalanced_design(rng, 10, 12))
        for kind in ("classical", "hetero_robust", "cluster_by_firm"):
            fit = fit_ols(dm, vcov_kind=kind)
            X, e = dm.regressors, fit.residuals
            assert np.max(np.abs(X.T @ e)) / (np.linalg.norm(X) * np.linalg.norm(e)) <= 1e-10
            assert fit.ssr == pytest.approx(e @ e, rel=1e-14)
            V = fit.vcov.to_numpy()
            np.testing.assert_array_equal(V, V.T)
            assert np.linalg.eigvalsh(V).min() >= -1e-10 * np.abs(V).max()

    def test_singleton_clusters_equal_hc1(self, rng):
        n = 200
        X = rng.normal(size=(n, 2))
        y = X @ [1.0, -0.5] + rng.normal(size=n) * (1 + np.abs(X[:, 0]))
        dm = plain_design(X, y, firms=np.arange(n))
        hc1 = fit_ols(dm, vcov_kind="hetero_robust").vcov.to_numpy()
        cl = fit_ols(dm, vcov_kind="cluster_by_firm").vcov.to_numpy()
        np.testing.assert_allclose(cl, hc1, rtol=1e-12)

    def test_homoskedastic_robust_matches_classical(self, rng):
        n = 10_000
        X = rng.normal(size=(n, 2))
        y = X @ [0.3, 0.7] + rng.normal(size=n)
        dm = plain_design(X, y)
        ratio = fit_ols(dm, "hetero_robust").std_errors / fit_ols(dm, "classical").std_errors
        assert ratio.between(0.8, 1.2).all()

    def test_table_layout(self, rng):
        fit = fit_ols(absorb_two_way(random_unbalanced_design(rng, 10, 12)))
        text = regression_table({"(1)": fit})
        assert "(1)" in text and "Observations" in text and "*** p<0.01" in text
        assert text.count("(") >= len(fit.labels)

    def test_json_payload(self, rng):
        fit = fit_ols(absorb_two_way(random_unbalanced_design(rng, 5, 6)))
        d = fit.to_dict(include_vcov=True)
        assert d["vcov"]["labels"] == fit.labels
        assert set(d["coefficients"]) == set(fit.labels)


class TestDeltaMethod:
    def test_identity(self):
        fit = fixed_fit([0.4, 0.1], np.diag([0.04, 0.01]))
        assert delta_method(fit, lambda b: b[0], lambda b: np.array([1.0, 0.0])) == pytest.approx((0.4, 0.2))

    def test_sum_with_identity_vcov(self):
        sigma = 0.3
        fit = fixed_fit([1.0, 2.0], np.eye(2) * sigma**2)
        value, se = delta_method(fit, lambda b: b.sum())
        assert value == pytest.approx(3.0)
        assert se == pytest.approx(sigma * np.sqrt(2))

    def test_long_run_ratio_against_finite_differences(self):
        b = np.array([0.0088, 0.8386])
        V = np.diag([0.0012**2, 0.01**2])
        fit = fixed_fit(b, V)
        g = lambda v: v[0] / (1 - v[1])
        grad = lambda v: np.array([1 / (1 - v[1]), v[0] / (1 - v[1]) ** 2])
        _, se = delta_method(fit, g, grad, check=True)
        fd = numerical_gradient(g, b)
        assert se == pytest.approx(np.sqrt(fd @ V @ fd), rel=1e-6)

    def test_check_catches_wrong_gradient(self):
        fit = fixed_fit([0.5, 0.2], np.eye(2))
        with pytest.raises(EstimationError, match="finite differences"):
            delta_method(fit, lambda b: b[0] * b[1], lambda b: np.array([1.0, 1.0]), check=True)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.lists(st.floats(-2, 2), min_size=3, max_size=3))
    def test_linear_transform_is_exact(self, b, w):
        rng = np.random.default_rng(0)
        A = rng.normal(size=(3, 3))
        V = A @ A.T
        w = np.asarray(w)
        _, se = delta_method(fixed_fit(b, V), lambda v: w @ v, lambda v: w)
        assert se**2 == pytest.approx(w @ V @ w, rel=1e-10, abs=1e-14)

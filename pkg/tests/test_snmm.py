import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_panel
from lagdose import (
    BandwidthRule,
    CenteredDesign,
    ConditionalMeans,
    CurrentCovariate,
    DataError,
    FeatureMap,
    KernelSNMM,
    LagWeights,
    SingularDesignError,
    SummarySpec,
    assemble_design,
    build_summaries,
    combine_weighted,
    confidence_intervals,
    estimate_conditional_means,
    fit_lag,
    fit_weighted_direct,
    sandwich_covariance,
)
from lagdose.simulation import DgpConfig, generate_panel
from lagdose.snmm import normal_quantile

X_SPEC = SummarySpec((CurrentCovariate("x"),))
FMAP = FeatureMap()


def _fitted(panel, lags=(1, 2, 3), rule=None):
    s = build_summaries(panel, X_SPEC)
    cm = estimate_conditional_means(panel, s, lags, rule or BandwidthRule())
    return s, cm


def _exact_model_panel(n=40, T=10, alpha=-0.7, beta=(0.3, 1.5), seed=0):
    """Noise-free outcomes following the lag-1 model plus g(x) = sin(x)."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, T + 1))
    A = rng.normal(size=(n, T)) + 0.5 * X[:, :T]
    Y = alpha * A**2 + (beta[0] + beta[1] * X[:, :T]) * A + np.sin(X[:, :T])
    return make_panel(X, A, Y)


def _exact_means(panel, alpha, beta):
    # any B, C will do; D is then chosen so that D = E(Y | S) under the model
    s = build_summaries(panel, X_SPEC)
    cm = estimate_conditional_means(panel, s, [1], BandwidthRule())
    x = s.values[..., 0]
    D = alpha * cm.B + (beta[0] + beta[1] * x) * cm.C + np.sin(x)
    return s, ConditionalMeans(cm.B, cm.C, {1: D}, cm.t_values, cm.bandwidths, cm.mode)


class TestDesign:
    def test_intercept_only_rows(self, small_panel):
        s, cm = _fitted(small_panel, (1,))
        d = assemble_design(small_panel, s, FeatureMap(True, ()), cm, 1)
        A = small_panel.A[:, s.t_values - 1]
        np.testing.assert_allclose(d.M[..., 0], A**2 - cm.B, atol=1e-12)
        np.testing.assert_allclose(d.M[..., 1], A - cm.C, atol=1e-12)
        assert d.param_names == ("alpha", "beta[intercept]")

    def test_target(self, small_panel):
        s, cm = _fitted(small_panel, (2,))
        d = assemble_design(small_panel, s, FMAP, cm, 2)
        t = d.t_values
        np.testing.assert_array_equal(d.R, small_panel.Y[:, t] - cm.D[2])
        assert t[-1] == small_panel.T - 1

    def test_perfect_centering_zero_rows(self, small_panel):
        s, cm = _fitted(small_panel, (1,))
        A = small_panel.A[:, s.t_values - 1]
        exact = ConditionalMeans(A**2, A.copy(), cm.D, cm.t_values, cm.bandwidths, cm.mode)
        d = assemble_design(small_panel, s, FMAP, exact, 1)
        assert not d.M.any()
        with pytest.raises(SingularDesignError, match="identically zero"):
            fit_lag(d)

    def test_identical_doses_are_singular(self):
        rng = np.random.default_rng(0)
        n, T = 30, 8
        A = np.tile(rng.uniform(0.1, 3, size=T), (n, 1))
        panel = make_panel(rng.normal(size=(n, T + 1)), A, rng.normal(size=(n, T)))
        with pytest.raises(SingularDesignError):
            KernelSNMM().fit(panel)

    def test_collinear_feature(self, small_panel):
        s, cm = _fitted(small_panel, (1,))
        fmap = FeatureMap(True, (0, 0))
        with pytest.raises(SingularDesignError, match="collinear"):
            fit_lag(assemble_design(small_panel, s, fmap, cm, 1))

    def test_t_range_checks(self, small_panel):
        s, cm = _fitted(small_panel, (1, 2))
        with pytest.raises(DataError):
            assemble_design(small_panel, s, FMAP, cm, 2, t_range=(1, small_panel.T))
        with pytest.raises(DataError):
            assemble_design(small_panel, s, FMAP, cm, 1, t_range=(5, 3))
        with pytest.raises(DataError):
            assemble_design(small_panel, s, FMAP, cm, 3)

    def test_centering_shrinks_with_n(self):
        means = []
        for n in (100, 800):
            panel = generate_panel(DgpConfig(n=n, T=20, seed=9))
            s, cm = _fitted(panel, (1,))
            d = assemble_design(panel, s, FMAP, cm, 1)
            means.append(np.abs(d.M.mean(axis=(0, 1))).max())
        assert means[1] < means[0] < 0.05


class TestClosedForm:
    def test_exact_model_recovery(self):
        alpha, beta = -0.7, (0.3, 1.5)
        panel = _exact_model_panel(alpha=alpha, beta=beta)
        s, cm = _exact_means(panel, alpha, beta)
        fit = fit_lag(assemble_design(panel, s, FMAP, cm, 1))
        np.testing.assert_allclose(fit.estimate, [alpha, *beta], atol=1e-8)
        # zero residuals: psi_i = 0 for every subject, so the covariance vanishes
        assert np.abs(fit.covariance).max() < 1e-9
        assert np.abs(fit.se).max() < 1e-9

    def test_normal_equations(self, sim_panel):
        s, cm = _fitted(sim_panel, (1,))
        d = assemble_design(sim_panel, s, FMAP, cm, 1)
        fit = fit_lag(d)
        resid = d.gram() @ fit.estimate - d.moment()
        assert np.abs(resid).max() <= 1e-9 * max(1.0, np.abs(d.moment()).max())

    def test_reference_panel_near_truth(self, sim_panel):
        s, cm = _fitted(sim_panel, (1,))
        fit = fit_lag(assemble_design(sim_panel, s, FMAP, cm, 1))
        assert np.all(np.abs(fit.estimate - [-1, 0, 2]) < 4 * fit.se)
        np.testing.assert_allclose(fit.se, [7.4e-3, 4.3e-3, 16.7e-3], rtol=0.3)

    @given(st.integers(0, 10_000), st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3))
    def test_outcome_scaling(self, seed, c):
        rng = np.random.default_rng(seed)
        n, m = 12, 4
        M = rng.normal(size=(n, m, 3))
        R = rng.normal(size=(n, m))
        names = ("alpha", "beta[intercept]", "beta[x]")
        t = np.arange(1, m + 1)
        a = fit_lag(CenteredDesign(M, R, t, names, k=1))
        b = fit_lag(CenteredDesign(M, c * R, t, names, k=1))
        np.testing.assert_allclose(b.estimate, c * a.estimate, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(b.se, abs(c) * a.se, rtol=1e-9, atol=1e-12)

    @given(st.integers(0, 10_000))
    def test_normal_equations_random(self, seed):
        rng = np.random.default_rng(seed)
        M = rng.normal(size=(9, 5, 3))
        R = rng.normal(size=(9, 5))
        d = CenteredDesign(M, R, np.arange(1, 6), ("a", "b", "c"), k=1)
        phi = fit_lag(d).estimate
        assert np.abs(d.gram() @ phi - d.moment()).max() < 1e-9


class TestWeighted:
    def test_direct_equals_combined_on_common_range(self, small_panel):
        K = 3
        s, cm = _fitted(small_panel, range(1, K + 1))
        w = LagWeights((0.5, 0.3, 0.2))
        common = (int(s.t_values[0]), small_panel.T - K + 1)
        per_lag = [fit_lag(assemble_design(small_panel, s, FMAP, cm, k, common)).params for k in (1, 2, 3)]
        combined = combine_weighted(per_lag, w).as_vector()
        direct = fit_weighted_direct(small_panel, s, FMAP, cm, w).estimate
        np.testing.assert_allclose(direct, combined, rtol=0, atol=1e-10)

    def test_single_lag_matches_fit_lag(self, small_panel):
        s, cm = _fitted(small_panel, (1,))
        direct = fit_weighted_direct(small_panel, s, FMAP, cm, LagWeights((1.0,)))
        single = fit_lag(assemble_design(small_panel, s, FMAP, cm, 1))
        np.testing.assert_allclose(direct.estimate, single.estimate, rtol=1e-14)
        np.testing.assert_allclose(direct.covariance, single.covariance, rtol=1e-12)

    def test_estimator_common_range(self, small_panel):
        est = KernelSNMM(lags=3, t_range="common", weights=(0.2, 0.3, 0.5)).fit(small_panel)
        combined = est.combined_params().as_vector()
        np.testing.assert_allclose(est.weighted_params_.as_vector(), combined, atol=1e-10)


class TestSandwich:
    def test_duplicated_subjects(self, small_panel):
        s, cm = _fitted(small_panel, (1,))
        d = assemble_design(small_panel, s, FMAP, cm, 1)
        dup = CenteredDesign(np.concatenate([d.M, d.M]), np.concatenate([d.R, d.R]), d.t_values, d.param_names, k=1)
        a, b = fit_lag(d), fit_lag(dup)
        np.testing.assert_allclose(b.estimate, a.estimate, rtol=1e-12)
        n = d.n
        np.testing.assert_allclose(b.se**2 / a.se**2, (n - 1) / (2 * n - 1), rtol=1e-10)

    def test_symmetric_psd(self, small_panel):
        s, cm = _fitted(small_panel, (1,))
        d = assemble_design(small_panel, s, FMAP, cm, 1)
        cov = sandwich_covariance(d, fit_lag(d).params)
        np.testing.assert_array_equal(cov, cov.T)
        assert np.linalg.eigvalsh(cov).min() > -1e-12

    def test_needs_two_subjects(self):
        d = CenteredDesign(np.ones((1, 3, 2)), np.ones((1, 3)), np.arange(1, 4), ("a", "b"), k=1)
        with pytest.raises(DataError):
            sandwich_covariance(d, np.zeros(2))


class TestIntervals:
    def _fit(self, small_panel):
        s, cm = _fitted(small_panel, (1,))
        return fit_lag(assemble_design(small_panel, s, FMAP, cm, 1))

    def test_wald(self, small_panel):
        fit = self._fit(small_panel)
        ci = confidence_intervals(fit, 0.95)
        np.testing.assert_allclose(ci[:, 0], fit.estimate - 1.959963984540054 * fit.se)
        np.testing.assert_allclose(ci[:, 1], fit.estimate + 1.959963984540054 * fit.se)

    def test_tiny_level_collapses(self, small_panel):
        fit = self._fit(small_panel)
        ci = confidence_intervals(fit, 1e-12)
        np.testing.assert_allclose(ci[:, 0], fit.estimate, atol=1e-12)
        np.testing.assert_allclose(ci[:, 1], fit.estimate, atol=1e-12)

    def test_zero_se(self):
        alpha, beta = -0.7, (0.3, 1.5)
        panel = _exact_model_panel(alpha=alpha, beta=beta)
        s, cm = _exact_means(panel, alpha, beta)
        fit = fit_lag(assemble_design(panel, s, FMAP, cm, 1))
        ci = confidence_intervals(fit)
        np.testing.assert_allclose(ci[:, 0], ci[:, 1], atol=1e-8)

    @pytest.mark.parametrize("level", [0, 1, 1.5, -0.2])
    def test_invalid_level(self, small_panel, level):
        with pytest.raises(DataError):
            confidence_intervals(self._fit(small_panel), level)

    def test_quantile(self):
        assert normal_quantile(0.975) == pytest.approx(1.959963984540054, rel=1e-12)

import numpy as np
import pytest
from conftest import make_data
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import objective, orthonormal_design, prox_grad, soft_threshold

import mplasso.solver as solver
from mplasso.glm import BERNOULLI, GAUSSIAN, CoefVector, Dataset
from mplasso.solver import (
    PenaltySpec,
    SolverConfig,
    fit_lasso_glm,
    kkt_violation,
    lambda_max,
    lambda_path,
    penalized_objective,
)

RAW = SolverConfig(standardize=False, tol=1e-10)


class TestPenaltySpec:
    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            PenaltySpec(-1.0)
        with pytest.raises(ValueError):
            PenaltySpec(1.0, np.array([1.0, -0.5])).resolve(2)

    def test_zero_times_inf_is_zero(self):
        s = PenaltySpec(np.inf, np.array([0.0, 1.0])).strengths(2)
        np.testing.assert_array_equal(s, [0.0, np.inf])

    def test_infinite_factor_excludes_even_at_zero_lambda(self):
        s = PenaltySpec(0.0, np.array([1.0, np.inf])).strengths(2)
        np.testing.assert_array_equal(s, [0.0, np.inf])

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(tol=0.0)
        with pytest.raises(ValueError):
            SolverConfig(max_outer=0)


class TestLambdaPath:
    def test_endpoints(self):
        np.testing.assert_allclose(lambda_path(1.0, 2, 0.01), [1.0, 0.01])

    def test_log_midpoint(self):
        np.testing.assert_allclose(lambda_path(1.0, 3, 0.01), [1.0, 0.1, 0.01])

    @given(lmax=st.floats(1e-6, 1e6), n=st.integers(2, 200), ratio=st.floats(1e-4, 0.99))
    def test_decreasing(self, lmax, n, ratio):
        path = lambda_path(lmax, n, ratio)
        assert path.shape == (n,)
        assert np.all(np.diff(path) < 0)

    @pytest.mark.parametrize("args", [(0.0, 10, 0.1), (1.0, 1, 0.1), (1.0, 10, 1.0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            lambda_path(*args)


class TestLambdaMax:
    @pytest.mark.parametrize("family", ["gaussian", "binomial"])
    def test_zero_at_lambda_max(self, family):
        data, _ = make_data(80, 30, family, seed=3)
        lm = lambda_max(data, family)
        fit = fit_lasso_glm(data, family, PenaltySpec(lm))
        assert np.all(fit.beta.slopes == 0)
        ybar = data.y.mean()
        expect = ybar if family == "gaussian" else np.log(ybar / (1 - ybar))
        assert fit.beta.intercept == pytest.approx(expect, abs=1e-8)
        fit = fit_lasso_glm(data, family, PenaltySpec(0.99 * lm))
        assert np.count_nonzero(fit.beta.slopes) >= 1

    def test_direct_formula_standardized(self, rng):
        X = rng.standard_normal((50, 8))
        y = rng.standard_normal(50)
        data = Dataset(X, y)
        Xs = (X - X.mean(0)) / X.std(0)
        assert lambda_max(data, GAUSSIAN) == pytest.approx(np.max(np.abs(Xs.T @ (y - y.mean()))) / 50)

    def test_all_factors_zero_raises(self):
        data, _ = make_data(20, 3)
        with pytest.raises(ValueError):
            lambda_max(data, GAUSSIAN, np.zeros(3))


class TestOracles:
    def test_soft_threshold_on_orthonormal_design(self, rng):
        for _ in range(10):
            n, p = 100, int(rng.integers(2, 21))
            X = orthonormal_design(n, p, rng)
            y = X @ rng.standard_normal(p) + rng.standard_normal(n)
            y -= y.mean()
            lam = float(rng.uniform(0.05, 1.0))
            fit = fit_lasso_glm(Dataset(X, y), GAUSSIAN, PenaltySpec(lam), RAW)
            np.testing.assert_allclose(fit.beta.slopes, soft_threshold(X.T @ y / n, lam), atol=1e-6)
            assert fit.beta.intercept == pytest.approx(0.0, abs=1e-10)

    @pytest.mark.parametrize("family", ["gaussian", "binomial"])
    def test_matches_proximal_gradient(self, family, rng):
        for seed in range(4):
            data, _ = make_data(60, 8, family, seed=seed)
            lam = 0.3 * lambda_max(data, family, standardize=False)
            fit = fit_lasso_glm(data, family, PenaltySpec(lam), RAW)
            b0, b, ref = prox_grad(data.X, [(1.0, data.y)], family, np.full(8, lam))
            mine = objective(data.X, [(1.0, data.y)], family, np.full(8, lam),
                             fit.beta.intercept, fit.beta.slopes)
            assert mine == pytest.approx(ref, abs=1e-6)
            assert mine <= ref + 1e-9

    @pytest.mark.parametrize("family", ["gaussian", "binomial"])
    def test_restricted_mle(self, family):
        data, _ = make_data(120, 5, family, seed=7)
        factors = np.array([0.0, 0.0, 1.0, 1.0, 1.0])
        fit = fit_lasso_glm(data, family, PenaltySpec(1e6, factors), SolverConfig(tol=1e-10))
        assert np.all(fit.beta.slopes[2:] == 0)
        # Unpenalized fit on the first two columns by Newton's method.
        Z = np.column_stack([np.ones(data.n), data.X[:, :2]])
        beta = np.zeros(3)
        for _ in range(100):
            th = Z @ beta
            mu = th if family == "gaussian" else 1 / (1 + np.exp(-th))
            v = np.ones_like(th) if family == "gaussian" else mu * (1 - mu)
            beta += np.linalg.solve(Z.T @ (v[:, None] * Z), Z.T @ (data.y - mu))
        np.testing.assert_allclose(fit.beta.slopes[:2], beta[1:], atol=1e-7)
        assert fit.beta.intercept == pytest.approx(beta[0], abs=1e-7)

    def test_infinite_factor_excludes_variable(self):
        data, _ = make_data(60, 4, seed=1)
        fit = fit_lasso_glm(data, GAUSSIAN, PenaltySpec(0.0, np.array([1, np.inf, 1, 1.0])))
        assert fit.beta.slopes[1] == 0
        assert np.all(fit.beta.slopes[[0, 2, 3]] != 0)


class TestProperties:
    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), family=st.sampled_from(["gaussian", "binomial"]),
           frac=st.floats(0.02, 0.9), std=st.booleans())
    def test_kkt_at_convergence(self, seed, family, frac, std):
        data, _ = make_data(50, 12, family, seed=seed)
        factors = np.random.default_rng(seed).uniform(0.0, 2.0, 12)
        factors[0] = 0.0
        cfg = SolverConfig(standardize=std)
        pen = PenaltySpec(frac * lambda_max(data, family, factors, std), factors)
        fit = fit_lasso_glm(data, family, pen, cfg)
        assert fit.converged
        assert kkt_violation(fit.beta, data, family, pen, std) <= 10 * cfg.tol

    def test_fractional_bernoulli_response(self, rng):
        X = rng.standard_normal((40, 6))
        data = Dataset(X, rng.uniform(0.05, 0.95, 40))
        pen = PenaltySpec(0.2 * lambda_max(data, BERNOULLI))
        fit = fit_lasso_glm(data, BERNOULLI, pen)
        assert fit.converged
        assert kkt_violation(fit.beta, data, BERNOULLI, pen) <= 1e-6

    @pytest.mark.parametrize("family", ["gaussian", "binomial"])
    def test_warm_start_invariance(self, family):
        data, _ = make_data(70, 25, family, seed=11)
        path = lambda_path(lambda_max(data, family), 10, 0.05)
        warm = None
        for lam in path:
            w = fit_lasso_glm(data, family, PenaltySpec(lam), warm=warm)
            c = fit_lasso_glm(data, family, PenaltySpec(lam))
            assert w.final_objective == pytest.approx(c.final_objective, abs=1e-6)
            warm = w.beta

    def test_gaussian_objective_monotone_per_sweep(self):
        data, _ = make_data(60, 30, seed=5)
        pen = PenaltySpec(0.05 * lambda_max(data, GAUSSIAN))
        values = []
        for k in range(1, 15):
            fit = fit_lasso_glm(data, GAUSSIAN, pen, SolverConfig(max_inner=k))
            values.append(penalized_objective(fit.beta, data, GAUSSIAN, pen))
        assert np.all(np.diff(values) <= 1e-12)

    def test_naive_mode_matches_gram_mode(self, monkeypatch):
        data, _ = make_data(50, 40, seed=2)
        pen = PenaltySpec(0.1 * lambda_max(data, GAUSSIAN))
        gram = fit_lasso_glm(data, GAUSSIAN, pen, SolverConfig(tol=1e-10))
        monkeypatch.setattr(solver, "GRAM_MAX_P", 0)
        naive = fit_lasso_glm(Dataset(data.X, data.y), GAUSSIAN, pen, SolverConfig(tol=1e-10))
        np.testing.assert_allclose(naive.beta.slopes, gram.beta.slopes, atol=1e-7)
        assert naive.beta.intercept == pytest.approx(gram.beta.intercept, abs=1e-7)

    def test_separation_flags_divergence(self, monkeypatch):
        monkeypatch.setattr(solver, "DIVERGENCE_BOUND", 10.0)
        X = np.array([[-2.0], [-1.0], [1.0], [2.0]])
        data = Dataset(X, np.array([0, 0, 1, 1.0]))
        fit = fit_lasso_glm(data, BERNOULLI, PenaltySpec(0.0), SolverConfig(standardize=False))
        assert fit.diverged and not fit.converged

    def test_iteration_cap_reports_nonconvergence(self):
        data, _ = make_data(60, 30, seed=5)
        fit = fit_lasso_glm(data, GAUSSIAN, PenaltySpec(0.01), SolverConfig(max_inner=1))
        assert not fit.converged

    def test_warm_start_length_checked(self):
        data, _ = make_data(20, 3)
        with pytest.raises(ValueError):
            fit_lasso_glm(data, GAUSSIAN, PenaltySpec(0.1), warm=CoefVector.zeros(4))

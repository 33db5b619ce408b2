import numpy as np
import pytest
from app.core.errors import ConditioningError, DomainError
from app.models.series import Theta
from app.services.conditional import (
    GaussianConditional,
    cholesky_with_jitter,
    conditional_gaussian_moments,
    gamma_full_conditional,
    gamma_full_conditionals,
    partition_and_condition,
)


class TestGammaFullConditional:
    """测试混合权重的 Gamma 满条件分布"""

    def setup_method(self):
        self.X = np.ones((3, 1))

    def test_zero_residual(self):
        theta = Theta(beta=[0.0], phi=[0.5], sigma2=1.0, nu=4.0)
        y = np.array([2.0, 1.0, 0.5])
        assert gamma_full_conditional(theta, y, self.X, 1) == pytest.approx((2.5, 2.0))

    def test_nonzero_residual(self):
        theta = Theta(beta=[0.0], phi=[0.5], sigma2=2.0, nu=4.0)
        # mu_1 = 0.5 * 2 = 1，残差为 2
        y = np.array([2.0, 3.0, 0.0])
        assert gamma_full_conditional(theta, y, self.X, 1) == pytest.approx((2.5, 3.0))

    def test_cauchy(self):
        theta = Theta(beta=[0.0], phi=[0.5], sigma2=1.0, nu=1.0)
        y = np.array([2.0, 1.0, 0.5])
        assert gamma_full_conditional(theta, y, self.X, 2) == pytest.approx((1.0, 0.5))

    def test_time_before_p(self):
        theta = Theta(beta=[0.0], phi=[0.5], sigma2=1.0, nu=4.0)
        with pytest.raises(DomainError):
            gamma_full_conditional(theta, np.zeros(3), self.X, 0)

    def test_vectorized(self):
        theta = Theta(beta=[0.3], phi=[0.5], sigma2=2.0, nu=4.0)
        y = np.array([2.0, 3.0, -1.0])
        shape, rates = gamma_full_conditionals(theta, y, self.X)
        for t in (1, 2):
            assert (shape, rates[t - 1]) == pytest.approx(gamma_full_conditional(theta, y, self.X, t))


class TestConditionalGaussianMoments:
    """测试给定 u 时的条件均值与协方差"""

    def test_independent_innovations(self):
        theta = Theta(beta=[1.0, 2.0], phi=[0.0, 0.0], sigma2=1.5, nu=4.0)
        X = np.column_stack([np.ones(6), np.arange(6.0)])
        gc = conditional_gaussian_moments(theta, np.ones(4), [0.3, -0.2], X)
        np.testing.assert_allclose(gc.sigma_tilde, 1.5 * np.eye(4))
        np.testing.assert_allclose(gc.mu_tilde, X[2:] @ theta.beta)

    def test_ar1_covariance(self):
        rho, sigma2 = 0.6, 1.3
        theta = Theta(beta=[0.0], phi=[rho], sigma2=sigma2, nu=4.0)
        gc = conditional_gaussian_moments(theta, np.ones(5), [1.0], np.ones((6, 1)))
        for k in range(1, 6):
            for l in range(1, 6):
                expected = sigma2 * sum(rho ** (k - j) * rho ** (l - j) for j in range(1, min(k, l) + 1))
                assert gc.sigma_tilde[k - 1, l - 1] == pytest.approx(expected)
        np.testing.assert_allclose(gc.mu_tilde, rho ** np.arange(1, 6))

    def test_heterogeneous_weights(self):
        theta = Theta(beta=[0.0], phi=[0.5], sigma2=2.0, nu=4.0)
        gc = conditional_gaussian_moments(theta, [1.0, 4.0], [0.0], np.ones((3, 1)))
        # C = [[1, 0], [0.5, 1]], diag(sigma2/u) = (2, 0.5)
        np.testing.assert_allclose(gc.sigma_tilde, [[2.0, 1.0], [1.0, 1.0]])

    def test_matches_simulation_recursion(self):
        """均值与二阶矩由显式递推得到的线性映射验证"""
        theta = Theta(beta=[0.5, -1.0], phi=[0.4, -0.3], sigma2=1.0, nu=4.0)
        rng = np.random.default_rng(5)
        X = np.column_stack([np.ones(7), rng.normal(size=7)])
        u = rng.uniform(0.5, 2.0, size=5)
        y0 = np.array([1.0, 0.2])
        gc = conditional_gaussian_moments(theta, u, y0, X)
        # y = a + L eps，eps ~ N(0, diag(sigma2/u))
        xb = X @ theta.beta
        a = np.empty(5)
        L = np.zeros((5, 5))
        z_hist = list((y0 - xb[:2])[::-1])
        rows = [np.zeros(5), np.zeros(5)]
        for k in range(5):
            a_k = theta.phi[0] * z_hist[0] + theta.phi[1] * z_hist[1]
            row = theta.phi[0] * rows[-1] + theta.phi[1] * rows[-2]
            row[k] = 1.0
            a[k], L[k] = a_k, row
            z_hist.insert(0, a_k)
            rows.append(row)
        np.testing.assert_allclose(gc.mu_tilde, xb[2:] + a, atol=1e-12)
        np.testing.assert_allclose(gc.sigma_tilde, (L * (1.0 / u)) @ L.T, atol=1e-12)

    def test_rejects_nonpositive_u(self):
        theta = Theta(beta=[0.0], phi=[0.5], sigma2=1.0, nu=4.0)
        with pytest.raises(DomainError):
            conditional_gaussian_moments(theta, [1.0, 0.0], [0.0], np.ones((3, 1)))


class TestPartitionAndCondition:
    """测试删失块的条件化"""

    def setup_method(self):
        self.gc = GaussianConditional(mu_tilde=[0.0, 0.0], sigma_tilde=[[1.0, 0.5], [0.5, 1.0]])

    def test_bivariate(self):
        pc = partition_and_condition(self.gc, [True, False], [1.0])
        assert pc.mu_star[0] == pytest.approx(0.5)
        assert pc.sigma_star[0, 0] == pytest.approx(0.75)
        np.testing.assert_array_equal(pc.miss_index, [0])

    def test_all_censored(self):
        pc = partition_and_condition(self.gc, [True, True], [])
        np.testing.assert_array_equal(pc.mu_star, self.gc.mu_tilde)
        np.testing.assert_array_equal(pc.sigma_star, self.gc.sigma_tilde)

    def test_none_censored(self):
        pc = partition_and_condition(self.gc, [False, False], [0.1, 0.2])
        assert pc.mu_star.shape == (0,)
        assert pc.sigma_star.shape == (0, 0)

    def test_schur_determinant(self):
        """det Sigma = det Sigma_oo * det Sigma_star"""
        rng = np.random.default_rng(4)
        theta = Theta(beta=[1.0, 0.5], phi=[0.6, -0.2], sigma2=1.5, nu=4.0)
        X = np.column_stack([np.ones(12), rng.normal(size=12)])
        gc = conditional_gaussian_moments(theta, rng.gamma(2.0, 0.5, size=10), [0.3, -0.1], X)
        mask = np.zeros(10, dtype=bool)
        mask[[1, 4, 5, 8]] = True
        pc = partition_and_condition(gc, mask, rng.normal(size=6))

        sign, logdet = np.linalg.slogdet(gc.sigma_tilde)
        sign_oo, logdet_oo = np.linalg.slogdet(gc.sigma_tilde[np.ix_(~mask, ~mask)])
        sign_star, logdet_star = np.linalg.slogdet(pc.sigma_star)
        assert sign == sign_oo == sign_star == 1.0
        assert logdet == pytest.approx(logdet_oo + logdet_star, abs=1e-9)

    def test_observed_count_mismatch(self):
        with pytest.raises(DomainError):
            partition_and_condition(self.gc, [True, False], [1.0, 2.0])

    def test_indefinite_matrix_reports_pivot(self):
        with pytest.raises(ConditioningError) as exc_info:
            cholesky_with_jitter(np.array([[1.0, 2.0], [2.0, 1.0]]), "Sigma_oo")
        assert exc_info.value.pivot == 1
        assert exc_info.value.details['pivot'] == 1

    def test_jitter_rescues_semidefinite(self):
        L = cholesky_with_jitter(np.array([[1.0, 1.0], [1.0, 1.0]]))
        np.testing.assert_allclose(L @ L.T, [[1.0, 1.0], [1.0, 1.0]], atol=1e-8)

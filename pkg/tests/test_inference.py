import numpy as np
import pytest
from scipy import optimize, special
from app.core.errors import DomainError, InferenceError
from app.models.fit import LatentDraw, LouisAccumulators
from app.models.series import Theta
from app.services.ar_structure import conditional_locations
from app.services.inference import (
    complete_hessian,
    complete_loglik,
    complete_score,
    confidence_interval,
    louis_update,
    observed_information,
    standard_errors,
)


def _random_problem(seed: int = 0, n: int = 30):
    rng = np.random.default_rng(seed)
    theta = Theta(beta=[0.8, -0.4], phi=[0.35, -0.15], sigma2=1.7, nu=5.5)
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    draw = LatentDraw(y_full=rng.normal(1.0, 1.5, size=n), u=rng.gamma(3.0, 1 / 3.0, size=n - 2))
    return theta, X, draw


def _shifted(theta: Theta, j: int, h: float) -> Theta:
    vector = theta.as_vector()
    vector[j] += h
    return Theta.from_vector(vector, theta.q, theta.p)


class TestCompleteDerivatives:
    """测试完全数据得分与 Hessian"""

    def setup_method(self):
        self.theta, self.X, self.draw = _random_problem()

    def test_score_matches_finite_difference(self):
        score = complete_score(self.theta, self.draw, self.X)
        for j in range(score.size):
            h = 1e-5 * max(1.0, abs(self.theta.as_vector()[j]))
            numeric = (complete_loglik(_shifted(self.theta, j, h), self.draw, self.X)
                       - complete_loglik(_shifted(self.theta, j, -h), self.draw, self.X)) / (2 * h)
            assert score[j] == pytest.approx(numeric, rel=1e-6, abs=1e-6)

    def test_hessian_matches_finite_difference(self):
        H = complete_hessian(self.theta, self.draw, self.X)
        for j in range(H.shape[0]):
            h = 1e-6 * max(1.0, abs(self.theta.as_vector()[j]))
            numeric = (complete_score(_shifted(self.theta, j, h), self.draw, self.X)
                       - complete_score(_shifted(self.theta, j, -h), self.draw, self.X)) / (2 * h)
            np.testing.assert_allclose(H[:, j], numeric, rtol=1e-5, atol=1e-5)

    def test_hessian_symmetric_with_zero_nu_cross_terms(self):
        H = complete_hessian(self.theta, self.draw, self.X)
        np.testing.assert_allclose(H, H.T)
        assert np.all(H[-1, :-1] == 0.0)
        assert np.all(H[:-1, -1] == 0.0)

    def test_zero_residuals(self):
        theta = Theta(beta=[1.0, 0.5], phi=[0.6], sigma2=2.0, nu=4.0)
        n = 12
        X = np.column_stack([np.ones(n), np.linspace(-1, 1, n)])
        y = np.empty(n)
        y[0] = 0.4
        for t in range(1, n):
            y[t] = conditional_locations(theta, y[t - 1:t + 1], X[t - 1:t + 1])[0]
        draw = LatentDraw(y_full=y, u=np.ones(n - 1))
        score = complete_score(theta, draw, X)
        np.testing.assert_allclose(score[:3], 0.0, atol=1e-12)
        assert score[3] == pytest.approx(-(n - 1) / (2 * 2.0))

    def test_beta_block_unit_weights(self):
        draw = LatentDraw(y_full=self.draw.y_full, u=np.ones(self.draw.u.size))
        H = complete_hessian(self.theta, draw, self.X)
        phi = self.theta.phi
        alpha = np.array([self.X[t] - phi[0] * self.X[t - 1] - phi[1] * self.X[t - 2] for t in range(2, 30)])
        np.testing.assert_allclose(H[:2, :2], -(alpha.T @ alpha) / self.theta.sigma2)

    def test_nu_score_vanishes_at_stationary_point(self):
        m = self.draw.u.size
        s = (np.sum(np.log(self.draw.u)) - np.sum(self.draw.u)) / m
        nu = optimize.brentq(lambda v: np.log(v / 2) + 1 - special.digamma(v / 2) + s, 0.05, 1e4)
        theta = Theta(beta=self.theta.beta, phi=self.theta.phi, sigma2=self.theta.sigma2, nu=nu)
        assert complete_score(theta, self.draw, self.X)[-1] == pytest.approx(0.0, abs=1e-8)

    def test_dimension_mismatch(self):
        draw = LatentDraw(y_full=self.draw.y_full, u=self.draw.u[:-1])
        with pytest.raises(DomainError):
            complete_score(self.theta, draw, self.X)


class TestLouis:
    """测试 Louis 累积量与观测信息矩阵"""

    def setup_method(self):
        self.theta, self.X, self.draw = _random_problem(1)
        self.d = self.theta.q + self.theta.p + 2

    def test_single_draw_memoryless(self):
        acc = louis_update(LouisAccumulators.zeros(self.d), [self.draw], self.theta, self.X, 1.0)
        score = complete_score(self.theta, self.draw, self.X)
        np.testing.assert_allclose(acc.Delta, score)
        np.testing.assert_allclose(acc.G, complete_hessian(self.theta, self.draw, self.X) + np.outer(score, score))

    def test_constant_draws_average(self):
        one = louis_update(LouisAccumulators.zeros(self.d), [self.draw], self.theta, self.X, 1.0)
        three = louis_update(LouisAccumulators.zeros(self.d), [self.draw] * 3, self.theta, self.X, 1.0)
        np.testing.assert_allclose(one.Delta, three.Delta)
        np.testing.assert_allclose(one.G, three.G)

    def test_smoothing(self):
        prev = LouisAccumulators(Delta=np.ones(self.d), G=np.eye(self.d))
        acc = louis_update(prev, [self.draw], self.theta, self.X, 0.25)
        score = complete_score(self.theta, self.draw, self.X)
        np.testing.assert_allclose(acc.Delta, 0.75 + 0.25 * score)

    def test_invalid_delta(self):
        with pytest.raises(DomainError):
            louis_update(LouisAccumulators.zeros(self.d), [self.draw], self.theta, self.X, 0.0)

    def test_identity(self):
        acc = LouisAccumulators(Delta=np.zeros(3), G=-np.eye(3))
        np.testing.assert_array_equal(observed_information(acc), np.eye(3))

    def test_scalar(self):
        acc = LouisAccumulators(Delta=np.array([0.5]), G=np.array([[-2.0]]))
        assert observed_information(acc)[0, 0] == pytest.approx(2.25)


class TestStandardErrors:
    """测试标准误与置信区间"""

    def test_diagonal(self):
        se, defined = standard_errors(np.diag([4.0, 25.0]))
        np.testing.assert_allclose(se, [0.5, 0.2])
        assert defined.all()

    def test_negative_direction_flagged(self):
        se, defined = standard_errors(np.diag([4.0, -25.0]))
        assert se[0] == pytest.approx(0.5)
        assert np.isnan(se[1])
        assert defined.tolist() == [True, False]

    def test_singular(self):
        with pytest.raises(InferenceError):
            standard_errors(np.array([[1.0, 1.0], [1.0, 1.0]]))

    def test_interval_standard(self):
        lo, hi = confidence_interval(0.0, 1.0)
        assert lo == pytest.approx(-1.959964, abs=1e-6)
        assert hi == pytest.approx(1.959964, abs=1e-6)

    def test_interval_degenerate(self):
        assert confidence_interval(3.0, 0.0) == (3.0, 3.0)

    def test_interval_example(self):
        lo, hi = confidence_interval(5.0, 0.125)
        assert lo == pytest.approx(4.755, abs=1e-3)
        assert hi == pytest.approx(5.245, abs=1e-3)

    def test_interval_invalid_level(self):
        with pytest.raises(DomainError):
            confidence_interval(0.0, 1.0, 1.5)

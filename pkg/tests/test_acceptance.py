"""较慢的端到端精度检查，默认不运行：pytest -m slow"""
import math
from typing import Dict, List
import numpy as np
import pytest
from joblib import Parallel, delayed
from scipy import optimize
from app.models.fit import SaemConfig
from app.models.series import CensoredSeries, ModelSpec, Theta
from app.models.simulation import McDesign, McSummary
from app.services.ar_structure import observed_loglik_uncensored
from app.services.forecast import ks_normality, quantile_residuals
from app.services.saem import fit, initial_theta
from app.services.simulation import mc_study, robustness_study, simulate_dataset

pytestmark = pytest.mark.slow

# 并行副本数，-1 表示使用全部核心
JOBS = -1

SIM1_THETA = Theta(beta=[5.0, 0.5, 0.9], phi=[-0.4, 0.12], sigma2=2.0, nu=4.0)
SIM2_THETA = Theta(beta=[4.0, 0.5], phi=[0.48, -0.2], sigma2=1.0, nu=math.inf)
AR1_THETA = Theta(beta=[5.0, 0.5, 0.9], phi=[-0.4], sigma2=2.0, nu=4.0)
AR1_DATASETS = 20


def _direct_ml(data: CensoredSeries, spec: ModelSpec) -> Theta:
    """以 Yule-Walker 初值直接数值极大化无删失的精确对数似然"""
    start = initial_theta(data, spec)
    q, p = spec.q, spec.p

    def unpack(z) -> Theta:
        return Theta(beta=z[:q], phi=z[q:q + p], sigma2=math.exp(z[q + p]), nu=math.exp(z[q + p + 1]))

    def objective(z) -> float:
        return -observed_loglik_uncensored(unpack(z), data.y, data.X)

    z0 = np.concatenate([start.beta, start.phi, [math.log(start.sigma2), math.log(min(start.nu, 100.0))]])
    bounds = [(None, None)] * q + [(-0.99, 0.99)] * p + [(None, None), (math.log(1.01), math.log(150.0))]
    result = optimize.minimize(objective, z0, method='L-BFGS-B', bounds=bounds,
                               options={'maxiter': 2000, 'ftol': 1e-12, 'gtol': 1e-8})
    return unpack(result.x)


def _loglik_gradient(theta: Theta, data: CensoredSeries) -> np.ndarray:
    """精确对数似然对 (beta, phi, sigma2, nu) 的中心差分梯度"""
    vector = theta.as_vector()
    grad = np.empty(vector.size)
    for j in range(vector.size):
        h = 1e-5 * max(1.0, abs(vector[j]))
        up, down = vector.copy(), vector.copy()
        up[j] += h
        down[j] -= h
        f_up = observed_loglik_uncensored(Theta.from_vector(up, theta.q, theta.p), data.y, data.X)
        f_down = observed_loglik_uncensored(Theta.from_vector(down, theta.q, theta.p), data.y, data.X)
        grad[j] = (f_up - f_down) / (2.0 * h)
    return grad


def _fit_ar1(replicate: int):
    design = McDesign(replicates=AR1_DATASETS, n=500, theta_true=AR1_THETA, lod=None, missing_frac=0.0, seed=41)
    data = simulate_dataset(design, replicate)
    result = fit(data, ModelSpec(p=1, q=3), SaemConfig(seed=41, stream_id=replicate))
    return data, result


@pytest.fixture(scope="module")
def ar1_fits():
    """20 条无删失 CARt(1) 序列及其 SAEM 拟合"""
    return Parallel(n_jobs=JOBS)(delayed(_fit_ar1)(r) for r in range(AR1_DATASETS))


@pytest.fixture(scope="module")
def sim1_summaries() -> Dict[int, McSummary]:
    """LOD 1.60 下 n = 100、300、600 各 100 个副本的汇总"""
    config = SaemConfig(seed=20240101)
    summaries = {}
    for n in (100, 300, 600):
        design = McDesign(replicates=100, n=n, theta_true=SIM1_THETA, lod=1.60, missing_frac=0.2, seed=20240101)
        summaries[n] = mc_study(design, config, jobs=JOBS)
    return summaries


class TestUncensoredOracle:
    """无删失时 SAEM 应与直接极大化精确似然一致"""

    def test_agrees_with_direct_maximizer(self, ar1_fits):
        spec = ModelSpec(p=1, q=3)
        agree = 0
        for data, result in ar1_fits:
            ml = _direct_ml(data, spec).as_vector()
            saem_estimate = result.theta.as_vector()
            # beta、phi、sigma2
            within = [
                result.se_defined[j] and abs(saem_estimate[j] - ml[j]) <= 2.0 * result.std_errors[j]
                for j in range(spec.q + spec.p + 1)
            ]
            agree += all(within)
        assert agree >= 18

    def test_score_vanishes_at_fit(self, ar1_fits):
        for data, result in ar1_fits:
            m = data.n - result.theta.p
            average = _loglik_gradient(result.theta, data) / m
            assert np.linalg.norm(average) < 0.05 * math.sqrt(data.n)

    def test_quantile_residuals_normal(self, ar1_fits):
        passed = 0
        for data, result in ar1_fits:
            residuals = quantile_residuals(result.theta, result.complete_series(data.y), data.X)
            _, pvalue = ks_normality(residuals)
            passed += pvalue > 0.01
        assert passed >= 18


class TestMonteCarloStudy:
    """LOD 1.60 的蒙特卡洛研究"""

    def test_mc_mean_n300(self, sim1_summaries):
        summary = sim1_summaries[300]
        assert summary.replicates_ok >= 95
        tolerance = {'beta': 0.10, 'phi': 0.05, 'sigma2': 0.20, 'nu': 1.0}
        for row in summary.parameters:
            kind = row.parameter.rstrip('0123456789')
            assert abs(row.mc_mean - row.truth) <= tolerance[kind], row.parameter

    def test_se_calibration_n300(self, sim1_summaries):
        for row in sim1_summaries[300].parameters:
            assert row.im_se is not None and row.mc_sd is not None
            assert abs(row.im_se - row.mc_sd) <= 0.30 * row.mc_sd, row.parameter

    def test_beta_coverage_n300(self, sim1_summaries):
        for row in sim1_summaries[300].parameters:
            if row.parameter.startswith('beta'):
                assert 0.88 <= row.cp <= 0.98, row.parameter

    def test_mse_decreases_with_n(self, sim1_summaries):
        names = SIM1_THETA.parameter_names()
        for name in names:
            mse = [sim1_summaries[n].parameter(name).mse for n in (100, 300, 600)]
            assert mse[0] > mse[1] > mse[2], name


class TestEstimationAccuracy:
    """大样本无删失时估计应接近真实值"""

    def setup_method(self):
        self.config = SaemConfig(M=10, W=200, c=0.25, seed=20240101)

    def test_uncensored_n600(self):
        design = McDesign(replicates=1, n=600, theta_true=SIM1_THETA, lod=None, missing_frac=0.0, seed=17)
        data = simulate_dataset(design)
        result = fit(data, ModelSpec(p=2, q=3), self.config)

        truth = SIM1_THETA.as_vector()
        estimate = result.theta.as_vector()
        # beta、phi、sigma2 落在 4 倍标准误以内
        for j in range(5):
            assert result.se_defined[j]
            assert abs(estimate[j] - truth[j]) <= 4.0 * result.std_errors[j]
        assert 2.0 < result.theta.nu < 12.0
        assert result.loglik is not None and math.isfinite(result.loglik)

    def test_censored_n300(self):
        design = McDesign(replicates=1, n=300, theta_true=SIM1_THETA, lod=3.45, missing_frac=0.2, seed=17)
        data = simulate_dataset(design)
        assert 0.05 < data.censoring_summary()['total_rate'] < 0.4
        result = fit(data, ModelSpec(p=2, q=3), self.config)
        np.testing.assert_allclose(result.theta.phi, SIM1_THETA.phi, atol=0.2)
        assert abs(result.theta.beta[0] - 5.0) < 1.0


class TestInfluenceDetection:
    """扰动越大，被扰动的观测越容易获得最小权重"""

    def test_detection_increases(self):
        design = McDesign(replicates=8, n=100, theta_true=SIM2_THETA, lod=None, missing_frac=0.0,
                          perturbation=[0.0, 5.0], seed=3)
        summaries = robustness_study(design, SaemConfig(M=5, W=100, c=0.3, seed=3))
        di = [summary.di_percent for summary in summaries]
        assert di[1] >= 75.0
        assert di[1] >= di[0]
        # 扰动后自由度估计变小
        assert summaries[1].nu_mean < summaries[0].nu_mean

    def test_robustness_design(self):
        design = McDesign(replicates=100, n=100, theta_true=SIM2_THETA, lod=None, missing_frac=0.0,
                          perturbation=[0.0, 3.0, 7.0], seed=20240101)
        summaries: List[McSummary] = robustness_study(design, SaemConfig(seed=20240101), jobs=JOBS)
        di = [summary.di_percent for summary in summaries]
        nu = [summary.nu_mean for summary in summaries]
        assert di[0] <= di[1] <= di[2]
        assert di[2] >= 95.0
        assert nu[0] > nu[1] > nu[2]

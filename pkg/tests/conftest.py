import pytest
import gc
import numpy as np
from app.models.fit import SaemConfig
from app.models.series import CensoredSeries, Theta
from app.services.sampler import RngStream
from app.services.simulation import generate_covariates, simulate_cart


@pytest.fixture(scope="function", autouse=True)
def cleanup():
    """测试结束后强制垃圾回收，释放 joblib 与大数组"""
    yield
    gc.collect()


@pytest.fixture
def ar2_theta() -> Theta:
    """常用的 CARt(2) 真实参数"""
    return Theta(beta=[5.0, 0.5, 0.9], phi=[-0.4, 0.12], sigma2=2.0, nu=4.0)


@pytest.fixture
def ar1_theta() -> Theta:
    return Theta(beta=[1.0, 0.5], phi=[0.5], sigma2=1.0, nu=5.0)


@pytest.fixture
def small_config() -> SaemConfig:
    """小规模 SAEM 参数，保证测试在秒级完成"""
    return SaemConfig(M=5, W=60, c=0.3, inner_sweeps=2, tol=1e-4, patience=3, seed=7)


def make_series(theta: Theta, n: int, seed: int = 11, lod=None) -> CensoredSeries:
    """生成一条（可选左删失的）模拟序列"""
    rng = RngStream(seed)
    X = generate_covariates(n, theta.q, rng.child(2))
    y = simulate_cart(theta, X, 100, rng.child(0))
    cens = np.zeros(n, dtype=bool) if lod is None else y <= lod
    cens[:theta.p] = False
    lower = np.where(cens, -np.inf, y)
    upper = np.where(cens, lod if lod is not None else np.inf, y)
    y_obs = np.where(cens, lod if lod is not None else np.nan, y)
    return CensoredSeries(y=y_obs, lower=lower, upper=upper, cens=cens, X=X)


@pytest.fixture
def ar1_series(ar1_theta) -> CensoredSeries:
    """n=120 的无删失 AR(1) 序列"""
    return make_series(ar1_theta, 120)


@pytest.fixture
def ar1_censored(ar1_theta) -> CensoredSeries:
    """n=120、约三成左删失的 AR(1) 序列"""
    return make_series(ar1_theta, 120, lod=0.2)

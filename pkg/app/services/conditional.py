"""潜变量的满条件分布：混合权重的 Gamma 条件分布与响应的高斯条件矩"""
from typing import Tuple
import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import linalg
from scipy.linalg import lapack
from app.core.errors import ConditioningError, DomainError
from app.core.logger import get_logger
from app.models.arrays import FloatArray, IndexArray
from app.models.series import Theta
from app.services.ar_structure import conditional_locations, psi_weights

logger = get_logger('conditional')

# 分解失败时加到对角线上的抖动比例
JITTER_SCALE = 1e-10


class GaussianConditional(BaseModel):
    """给定 u 与前 p 个观测时 y_{p+1:n} 的正态分布参数"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    mu_tilde: FloatArray = Field(..., description="条件均值，长度 n-p")
    sigma_tilde: FloatArray = Field(..., description="(n-p)×(n-p) 条件协方差")


class PartitionedConditional(BaseModel):
    """删失/缺失块在给定观测块后的条件分布"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    mu_star: FloatArray = Field(..., description="条件均值，长度 n_m")
    sigma_star: FloatArray = Field(..., description="n_m×n_m 条件协方差")
    miss_index: IndexArray = Field(..., description="删失项在 p..n-1 段内的相对位置")


def cholesky_with_jitter(a: np.ndarray, what: str = "matrix", scale: float = JITTER_SCALE) -> np.ndarray:
    """下三角 Cholesky 分解，失败时加一次对角抖动

    Args:
        a: 对称矩阵
        what: 出错时报告的矩阵名称
        scale: 抖动量为 scale * mean(diag)

    Returns:
        下三角因子 L，满足 L L' = a (+ 抖动)
    """
    factor, info = lapack.dpotrf(a, lower=1, clean=1)
    if info == 0:
        return factor
    if info < 0:
        raise DomainError(f"{what} 分解参数非法")
    jitter = scale * float(np.mean(np.diag(a)))
    logger.warning(f"{what} Cholesky 分解在主元 {info} 失败，加入对角抖动 {jitter:.3e}")
    factor, info = lapack.dpotrf(a + jitter * np.eye(a.shape[0]), lower=1, clean=1)
    if info != 0:
        # dpotrf 返回 1 起始的主元位置
        raise ConditioningError(f"{what} 数值奇异，主元 {info - 1} 不正定", pivot=int(info - 1))
    return factor


def residuals(theta: Theta, y_full, X) -> np.ndarray:
    """中心化残差 rho_t = y_t - mu_t，t = p..n-1"""
    return np.asarray(y_full, dtype=float)[theta.p:] - conditional_locations(theta, y_full, X)


def gamma_full_conditional(theta: Theta, y_full, X, t: int) -> Tuple[float, float]:
    """混合权重 U_t 的 Gamma 满条件分布参数（形状-速率参数化）

    Args:
        theta: 当前参数
        y_full: 已填补的完整序列
        X: 协变量
        t: 时刻（0 起始，需 t >= p）

    Returns:
        (shape, rate)
    """
    p = theta.p
    y_full = np.asarray(y_full, dtype=float)
    if t < p or t >= y_full.size:
        raise DomainError(f"时刻 t={t} 必须位于 [{p}, {y_full.size})")
    window = slice(t - p, t + 1)
    rho = residuals(theta, y_full[window], np.asarray(X)[window])[0]
    return 0.5 * (theta.nu + 1.0), 0.5 * (theta.nu + rho * rho / theta.sigma2)


def gamma_full_conditionals(theta: Theta, y_full, X) -> Tuple[float, np.ndarray]:
    """所有 t = p..n-1 的 Gamma 参数，形状参数相同"""
    rho = residuals(theta, y_full, X)
    return 0.5 * (theta.nu + 1.0), 0.5 * (theta.nu + rho * rho / theta.sigma2)


def conditional_gaussian_moments(theta: Theta, u, y_first_p, X) -> GaussianConditional:
    """给定 u 与前 p 个观测时 y_{p+1:n} 的均值与协方差

    Args:
        theta: 当前参数
        u: 混合权重，长度 n-p
        y_first_p: 前 p 个观测
        X: n×q 协变量

    Returns:
        GaussianConditional
    """
    u = np.asarray(u, dtype=float)
    X = np.asarray(X, dtype=float)
    p = theta.p
    m = X.shape[0] - p
    if u.shape != (m,):
        raise DomainError(f"u 的长度应为 n-p={m}")
    if np.any(u <= 0):
        raise DomainError("u 的所有元素必须为正")

    weights = psi_weights(theta.phi, m)
    xb = X @ theta.beta
    # w_p = y_(p+1,p) - X_(p+1,p) beta，最近的在前
    state = (np.asarray(y_first_p, dtype=float) - xb[:p])[::-1]
    mu_tilde = np.empty(m)
    for k in range(m):
        state = weights.Phi @ state
        mu_tilde[k] = xb[p + k] + state[0]

    # Sigma = C diag(sigma2/u) C'，C 为 psi 权重构成的下三角 Toeplitz 矩阵
    C = linalg.toeplitz(weights.c[:m], np.zeros(m))
    sigma_tilde = (C * (theta.sigma2 / u)) @ C.T
    sigma_tilde = 0.5 * (sigma_tilde + sigma_tilde.T)
    return GaussianConditional(mu_tilde=mu_tilde, sigma_tilde=sigma_tilde)


def partition_and_condition(gc: GaussianConditional, cens_mask, y_observed_values) -> PartitionedConditional:
    """按观测/删失划分并计算删失块的条件分布

    Args:
        gc: 未划分的条件分布
        cens_mask: 长度 n-p 的删失指示
        y_observed_values: 观测块的取值，按时间顺序

    Returns:
        PartitionedConditional
    """
    mask = np.asarray(cens_mask, dtype=bool)
    miss = np.flatnonzero(mask)
    obs = np.flatnonzero(~mask)
    y_o = np.asarray(y_observed_values, dtype=float).reshape(-1)
    if mask.size != gc.mu_tilde.size:
        raise DomainError(f"cens_mask 长度应为 {gc.mu_tilde.size}")
    if y_o.size != obs.size:
        raise DomainError(f"观测值个数应为 {obs.size}，实际为 {y_o.size}")

    if miss.size == 0:
        return PartitionedConditional(mu_star=np.empty(0), sigma_star=np.empty((0, 0)), miss_index=miss)
    if obs.size == 0:
        return PartitionedConditional(mu_star=gc.mu_tilde.copy(), sigma_star=gc.sigma_tilde.copy(), miss_index=miss)

    S = gc.sigma_tilde
    S_oo = S[np.ix_(obs, obs)]
    S_mo = S[np.ix_(miss, obs)]
    factor = cholesky_with_jitter(S_oo, "Sigma_oo")
    # Sigma_oo^{-1} (y_o - mu_o) 与 Sigma_oo^{-1} Sigma_om
    solved = linalg.cho_solve((factor, True), np.column_stack([y_o - gc.mu_tilde[obs], S_mo.T]))
    mu_star = gc.mu_tilde[miss] + S_mo @ solved[:, 0]
    sigma_star = S[np.ix_(miss, miss)] - S_mo @ solved[:, 1:]
    sigma_star = 0.5 * (sigma_star + sigma_star.T)
    return PartitionedConditional(mu_star=mu_star, sigma_star=sigma_star, miss_index=miss)

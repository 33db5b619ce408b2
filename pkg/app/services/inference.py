"""Louis 方法的观测信息矩阵与标准误"""
import math
from typing import Sequence, Tuple
import numpy as np
from scipy import linalg, special, stats
from app.core.errors import DomainError, InferenceError
from app.models.fit import LatentDraw, LouisAccumulators
from app.models.series import Theta
from app.services.ar_structure import conditional_locations, lag_covariates, lag_matrix

# 条件数超过该值视为奇异
SINGULAR_CONDITION = 1e15


def _complete_terms(theta: Theta, draw: LatentDraw, X):
    """残差 e、alpha_i = x_i - X_(i,p)' phi 与 w_i = y_(i,p) - X_(i,p) beta"""
    p = theta.p
    X = np.asarray(X, dtype=float)
    y = np.asarray(draw.y_full, dtype=float)
    u = np.asarray(draw.u, dtype=float)
    if u.size != y.size - p or X.shape[0] != y.size:
        raise DomainError(f"抽样与数据维度不一致: n={y.size}, len(u)={u.size}, p={p}")
    e = y[p:] - conditional_locations(theta, y, X)
    alpha = X[p:] - np.einsum('ijk,j->ik', lag_covariates(X, p), theta.phi)
    w = lag_matrix(y, p) - lag_matrix(X @ theta.beta, p)
    return u, e, alpha, w


def complete_loglik(theta: Theta, draw: LatentDraw, X) -> float:
    """完全数据对数似然，省略与 theta 无关的项"""
    u, e, _, _ = _complete_terms(theta, draw, X)
    m = u.size
    nu, sigma2 = theta.nu, theta.sigma2
    return float(-0.5 * m * math.log(sigma2) - 0.5 * (u @ (e * e)) / sigma2
                 + m * (0.5 * nu * math.log(0.5 * nu) - special.gammaln(0.5 * nu))
                 + 0.5 * nu * (np.sum(np.log(u)) - np.sum(u)))


def complete_score(theta: Theta, draw: LatentDraw, X) -> np.ndarray:
    """完全数据得分向量，顺序为 (beta, phi, sigma2, nu)

    Args:
        theta: 参数
        draw: 一组潜变量抽样
        X: 协变量

    Returns:
        长度 q+p+2 的向量
    """
    u, e, alpha, w = _complete_terms(theta, draw, X)
    m = u.size
    sigma2, nu = theta.sigma2, theta.nu
    ue = u * e
    d_beta = alpha.T @ ue / sigma2
    d_phi = w.T @ ue / sigma2
    d_sigma2 = -0.5 * m / sigma2 + 0.5 * (ue @ e) / sigma2 ** 2
    d_nu = (0.5 * m * (math.log(0.5 * nu) + 1.0 - special.digamma(0.5 * nu))
            + 0.5 * (np.sum(np.log(u)) - np.sum(u)))
    return np.concatenate([d_beta, d_phi, [d_sigma2, d_nu]])


def complete_hessian(theta: Theta, draw: LatentDraw, X) -> np.ndarray:
    """完全数据 Hessian 矩阵，nu 与其他参数的交叉块恒为零

    Args:
        theta: 参数
        draw: 一组潜变量抽样
        X: 协变量

    Returns:
        d×d 对称矩阵
    """
    u, e, alpha, w = _complete_terms(theta, draw, X)
    p, q = theta.p, theta.q
    m = u.size
    sigma2, nu = theta.sigma2, theta.nu
    ue = u * e
    lagged_X = lag_covariates(X, p)

    d = q + p + 2
    H = np.zeros((d, d))
    b, f, s, v = slice(0, q), slice(q, q + p), q + p, q + p + 1
    H[b, b] = -(alpha.T * u) @ alpha / sigma2
    # d/dphi (u e alpha) = -u alpha w' - u e X_(i,p)'
    H[b, f] = -((alpha.T * u) @ w + np.einsum('i,ijk->kj', ue, lagged_X)) / sigma2
    H[f, f] = -(w.T * u) @ w / sigma2
    H[b, s] = -alpha.T @ ue / sigma2 ** 2
    H[f, s] = -w.T @ ue / sigma2 ** 2
    H[s, s] = 0.5 * m / sigma2 ** 2 - (ue @ e) / sigma2 ** 3
    H[v, v] = 0.5 * m * (1.0 / nu - 0.5 * special.polygamma(1, 0.5 * nu))
    H[f, b] = H[b, f].T
    H[s, b] = H[b, s]
    H[s, f] = H[f, s]
    return H


def louis_update(acc: LouisAccumulators, draws: Sequence[LatentDraw], theta: Theta, X, delta: float) -> LouisAccumulators:
    """Delta 与 G 的随机逼近更新

    Args:
        acc: 上一次的累积量
        draws: 本次迭代的抽样
        theta: 计算导数所用的参数
        X: 协变量
        delta: 平滑权重

    Returns:
        更新后的 LouisAccumulators
    """
    if not 0 < delta <= 1:
        raise DomainError(f"delta 必须位于 (0, 1]: {delta}")
    if not draws:
        raise DomainError("draws 不能为空")
    score_mean = np.zeros_like(acc.Delta)
    curvature_mean = np.zeros_like(acc.G)
    for draw in draws:
        score = complete_score(theta, draw, X)
        score_mean += score
        curvature_mean += complete_hessian(theta, draw, X) + np.outer(score, score)
    score_mean /= len(draws)
    curvature_mean /= len(draws)
    G = acc.G + delta * (curvature_mean - acc.G)
    return LouisAccumulators(Delta=acc.Delta + delta * (score_mean - acc.Delta), G=0.5 * (G + G.T))


def observed_information(acc: LouisAccumulators) -> np.ndarray:
    """H = -G + Delta Delta'"""
    H = -acc.G + np.outer(acc.Delta, acc.Delta)
    return 0.5 * (H + H.T)


def standard_errors(H) -> Tuple[np.ndarray, np.ndarray]:
    """由观测信息矩阵计算标准误

    Args:
        H: 观测信息矩阵

    Returns:
        (标准误, 是否有定义)；逆矩阵对角线为负的位置标准误为 NaN，标志为 False
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    H = 0.5 * (H + H.T)
    if not np.all(np.isfinite(H)):
        raise InferenceError("信息矩阵含有非有限值")
    if np.linalg.cond(H) > SINGULAR_CONDITION:
        raise InferenceError("信息矩阵奇异，无法求逆", {'condition': float(np.linalg.cond(H))})
    try:
        cov = linalg.inv(H)
    except linalg.LinAlgError as e:
        raise InferenceError(f"信息矩阵奇异: {e}") from e
    diag = np.diag(cov)
    defined = diag >= 0
    se = np.full(diag.shape, np.nan)
    se[defined] = np.sqrt(diag[defined])
    return se, defined


def confidence_interval(est: float, se: float, level: float = 0.95) -> Tuple[float, float]:
    """正态分位数的 Wald 区间 est ± z * se"""
    if not 0 < level < 1:
        raise DomainError(f"置信水平必须位于 (0, 1): {level}")
    if not se >= 0:
        raise DomainError(f"标准误必须非负: {se}")
    z = stats.norm.ppf(0.5 + 0.5 * level)
    return float(est - z * se), float(est + z * se)

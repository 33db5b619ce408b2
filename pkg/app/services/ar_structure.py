import numpy as np
from scipy import signal
from app.core.errors import DomainError
from app.models.series import PsiWeights, Theta
from app.services.student_t import student_t_logpdf

# 平稳性判定的谱半径余量
STATIONARITY_MARGIN = 1e-8


def companion_matrix(phi) -> np.ndarray:
    """构造 AR(p) 的伴随矩阵

    Args:
        phi: 自回归系数，长度 p

    Returns:
        p×p 矩阵，第一行为 phi，次对角线为单位块
    """
    phi = np.asarray(phi, dtype=float).reshape(-1)
    p = phi.size
    if p == 0:
        raise DomainError("phi 不能为空")
    Phi = np.zeros((p, p))
    Phi[0, :] = phi
    if p > 1:
        Phi[1:, :-1] = np.eye(p - 1)
    return Phi


def psi_weights(phi, K: int) -> PsiWeights:
    """计算 (Phi^j)_11, j = 0..K

    等价于 AR 脉冲响应 c_j = sum_i phi_i c_{j-i}，这里用线性滤波器实现。

    Args:
        phi: 自回归系数
        K: 最高幂次

    Returns:
        PsiWeights
    """
    if K < 0:
        raise DomainError(f"K 必须非负: {K}")
    Phi = companion_matrix(phi)
    impulse = np.zeros(K + 1)
    impulse[0] = 1.0
    c = signal.lfilter([1.0], np.concatenate([[1.0], -Phi[0]]), impulse)
    c[0] = 1.0
    return PsiWeights(c=c, Phi=Phi)


def is_stationary(phi) -> bool:
    """谱半径是否严格小于 1 - STATIONARITY_MARGIN"""
    phi = np.asarray(phi, dtype=float).reshape(-1)
    if phi.size == 0:
        return True
    radius = np.max(np.abs(np.linalg.eigvals(companion_matrix(phi))))
    return bool(radius < 1.0 - STATIONARITY_MARGIN)


def lag_window(y, t: int, p: int) -> np.ndarray:
    """时刻 t 的滞后窗口 (y[t-1], ..., y[t-p])，最近的在前"""
    if t < p:
        raise DomainError(f"时刻 t={t} 没有完整的 p={p} 阶滞后")
    return np.asarray(y)[t - p:t][::-1]


def lag_matrix(y, p: int) -> np.ndarray:
    """将 t = p..n-1 的滞后窗口按行堆叠为 (n-p)×p 矩阵"""
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    # 第 j 列为滞后 j+1 阶
    return np.stack([y[p - j - 1:n - j - 1] for j in range(p)], axis=1)


def lag_covariates(X, p: int) -> np.ndarray:
    """X_(t,p) 的堆叠，形状 (n-p)×p×q"""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    return np.stack([X[p - j - 1:n - j - 1] for j in range(p)], axis=1)


def conditional_location(theta: Theta, y_window, x_t, X_window) -> float:
    """条件位置参数 mu_t = x_t'beta + (y_(t,p) - X_(t,p) beta)' phi

    Args:
        theta: 模型参数
        y_window: 最近在前的 p 个历史响应
        x_t: 时刻 t 的协变量
        X_window: 与 y_window 对应的 p×q 协变量

    Returns:
        mu_t
    """
    y_window = np.asarray(y_window, dtype=float).reshape(-1)
    x_t = np.asarray(x_t, dtype=float).reshape(-1)
    X_window = np.atleast_2d(np.asarray(X_window, dtype=float))
    if y_window.size != theta.p or x_t.size != theta.q or X_window.shape != (theta.p, theta.q):
        raise DomainError(
            f"维度不一致: y_window={y_window.shape}, x_t={x_t.shape}, X_window={X_window.shape}, "
            f"p={theta.p}, q={theta.q}"
        )
    return float(x_t @ theta.beta + (y_window - X_window @ theta.beta) @ theta.phi)


def conditional_locations(theta: Theta, y, X) -> np.ndarray:
    """t = p..n-1 全部时刻的条件位置参数"""
    p = theta.p
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    xb = X @ theta.beta
    Y = lag_matrix(y, p)
    B = lag_matrix(xb, p)
    return xb[p:] + (Y - B) @ theta.phi


def observed_loglik_uncensored(theta: Theta, y, X) -> float:
    """无删失时的精确观测对数似然，以前 p 个观测为条件

    Args:
        theta: 模型参数
        y: 完全观测的序列
        X: 协变量

    Returns:
        sum_t log T(y_t; mu_t, sigma2, nu)，t = p..n-1
    """
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise DomainError("序列中存在缺失或非有限值")
    mu = conditional_locations(theta, y, X)
    return float(np.sum(student_t_logpdf(y[theta.p:], mu, theta.sigma2, theta.nu)))

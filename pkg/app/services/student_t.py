"""Student-t 新息的密度与分布函数"""
import numpy as np
from scipy import special
from app.core.errors import DomainError

# 尾部概率下限
TAIL_FLOOR = 1e-300


def _check_scale(sigma2, nu) -> None:
    if not np.all(np.asarray(sigma2) > 0) or not np.all(np.asarray(nu) > 0):
        raise DomainError(f"sigma2 和 nu 必须为正数: sigma2={sigma2}, nu={nu}")


def student_t_logpdf(x, mu, sigma2, nu):
    """位置-尺度 Student-t 对数密度

    Args:
        x: 取值（标量或数组）
        mu: 位置参数
        sigma2: 尺度参数
        nu: 自由度

    Returns:
        log f(x - mu; sigma2, nu)
    """
    _check_scale(sigma2, nu)
    z2 = (np.asarray(x, dtype=float) - mu) ** 2 / sigma2
    half = 0.5 * (nu + 1.0)
    value = (special.gammaln(half) - special.gammaln(0.5 * nu)
             - 0.5 * np.log(nu * np.pi * sigma2)
             - half * np.log1p(z2 / nu))
    return value if np.ndim(value) else float(value)


def student_t_cdf(x, mu, sigma2, nu):
    """位置-尺度 Student-t 分布函数，基于正则化不完全 Beta 函数

    Args:
        x: 取值（标量或数组）
        mu: 位置参数
        sigma2: 尺度参数
        nu: 自由度

    Returns:
        P(X <= x)
    """
    _check_scale(sigma2, nu)
    z = (np.asarray(x, dtype=float) - mu) / np.sqrt(sigma2)
    # 单侧尾概率 P(T > |z|) = I_{nu/(nu+z^2)}(nu/2, 1/2) / 2
    tail = 0.5 * special.betainc(0.5 * nu, 0.5, nu / (nu + z * z))
    tail = np.maximum(tail, TAIL_FLOOR)
    value = np.where(z > 0, 1.0 - tail, tail)
    return value if np.ndim(value) else float(value)

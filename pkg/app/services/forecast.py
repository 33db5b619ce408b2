"""递推预测、一步预测误差与分位数残差"""
from typing import Optional, Tuple
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import special, stats
from app.core.errors import DomainError
from app.models.arrays import FloatArray
from app.models.series import ModelSpec, Theta
from app.services.ar_structure import conditional_locations
from app.services.student_t import student_t_cdf

# 分位数残差的 CDF 截断界
CDF_CLIP = 1e-15


class ForecastRequest(BaseModel):
    """预测请求"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    horizon: int = Field(..., description="预测步数 n_pred")
    X_pred: FloatArray = Field(..., description="n_pred×q 未来协变量")

    @model_validator(mode="after")
    def _check_rows(self):
        if self.horizon < 1:
            raise DomainError(f"预测步数必须至少为 1: {self.horizon}")
        if self.X_pred.ndim == 1:
            self.X_pred = self.X_pred.reshape(1, -1) if self.horizon == 1 else self.X_pred.reshape(-1, 1)
        if self.X_pred.shape[0] != self.horizon:
            raise DomainError(f"协变量行数 {self.X_pred.shape[0]} 与预测步数 {self.horizon} 不一致")
        return self


def forecast(theta: Theta, y_complete, X, req: ForecastRequest) -> np.ndarray:
    """递推预测 y_{n+1..n+n_pred}，后续步使用前面步的预测值

    Args:
        theta: 参数估计
        y_complete: 已填补的完整序列
        X: 历史协变量
        req: 预测请求

    Returns:
        长度 n_pred 的预测值
    """
    p = theta.p
    y = np.asarray(y_complete, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not np.all(np.isfinite(y)):
        raise DomainError("预测需要完整序列，请先填补删失值")
    if y.size < p or X.shape[0] != y.size:
        raise DomainError(f"历史长度不足或与协变量不一致: n={y.size}, X 行数={X.shape[0]}, p={p}")
    if req.X_pred.shape[1] != theta.q:
        raise DomainError(f"未来协变量列数应为 {theta.q}")

    # 中心化历史 z_t = y_t - x_t'beta，最近的在前
    centered = list((y[-p:] - X[-p:] @ theta.beta)[::-1])
    means = req.X_pred @ theta.beta
    predictions = np.empty(req.horizon)
    for k in range(req.horizon):
        z = float(np.dot(theta.phi, centered[:p]))
        predictions[k] = means[k] + z
        centered.insert(0, z)
    return predictions


def one_step_ahead(theta: Theta, history, X_history, X_test, y_test) -> np.ndarray:
    """测试集上的一步预测，每步使用真实的历史值"""
    history = np.asarray(history, dtype=float)
    y_test = np.asarray(y_test, dtype=float).reshape(-1)
    X_history = np.atleast_2d(np.asarray(X_history, dtype=float))
    X_test = np.asarray(X_test, dtype=float).reshape(y_test.size, -1)
    if history.size < theta.p:
        raise DomainError(f"历史长度必须至少为 p={theta.p}")
    if X_history.shape[0] != history.size:
        raise DomainError("历史序列与历史协变量的长度不一致")
    y_all = np.concatenate([history[-theta.p:], y_test])
    X_all = np.vstack([X_history[-theta.p:], X_test])
    return conditional_locations(theta, y_all, X_all)


def _check_pair(pred, actual) -> np.ndarray:
    pred = np.asarray(pred, dtype=float).reshape(-1)
    actual = np.asarray(actual, dtype=float).reshape(-1)
    if pred.size == 0 or pred.size != actual.size:
        raise DomainError(f"预测与真实值长度必须相同且非空: {pred.size} vs {actual.size}")
    return pred - actual


def mspe(pred, actual) -> float:
    """均方预测误差"""
    err = _check_pair(pred, actual)
    return float(np.mean(err * err))


def mape(pred, actual) -> float:
    """平均绝对预测误差（不做百分比归一化）"""
    return float(np.mean(np.abs(_check_pair(pred, actual))))


def quantile_residuals(theta: Theta, y_complete, X, spec: Optional[ModelSpec] = None) -> np.ndarray:
    """分位数残差 r_i = Phi^{-1}(T(y_i; mu_i, sigma2, nu))，i = p..n-1

    Args:
        theta: 参数估计
        y_complete: 已填补的完整序列
        X: 协变量
        spec: 可选的模型阶数，给出时检查与 theta 一致

    Returns:
        长度 n-p 的残差
    """
    y = np.asarray(y_complete, dtype=float)
    if not np.all(np.isfinite(y)):
        raise DomainError("分位数残差需要完整序列")
    if spec is not None and (spec.p, spec.q) != (theta.p, theta.q):
        raise DomainError(f"模型阶数与参数不一致: p={spec.p}, q={spec.q}")
    mu = conditional_locations(theta, y, X)
    prob = student_t_cdf(y[theta.p:], mu, theta.sigma2, theta.nu)
    return special.ndtri(np.clip(prob, CDF_CLIP, 1.0 - CDF_CLIP))


def residual_acf(residuals, max_lag: int) -> np.ndarray:
    """样本自相关函数，lag 0..max_lag"""
    x = np.asarray(residuals, dtype=float).reshape(-1)
    if not 0 <= max_lag < x.size:
        raise DomainError(f"max_lag 必须位于 [0, {x.size})")
    centered = x - x.mean()
    denom = centered @ centered
    if denom == 0:
        raise DomainError("残差为常数，自相关无定义")
    return np.array([centered[:x.size - k] @ centered[k:] / denom for k in range(max_lag + 1)])


def ks_normality(residuals) -> Tuple[float, float]:
    """对标准正态的 KS 检验，返回 (统计量, p 值)"""
    x = np.asarray(residuals, dtype=float).reshape(-1)
    if x.size == 0:
        raise DomainError("残差为空")
    result = stats.kstest(x, 'norm')
    return float(result.statistic), float(result.pvalue)


def train_test_split(y, X, n_test: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """按时间顺序切分为训练段与测试段

    Returns:
        (y_train, X_train, y_test, X_test)
    """
    y = np.asarray(y, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] != y.size:
        X = X.reshape(y.size, -1)
    if not 1 <= n_test < y.size:
        raise DomainError(f"n_test 必须位于 [1, {y.size})")
    cut = y.size - n_test
    return y[:cut], X[:cut], y[cut:], X[cut:]

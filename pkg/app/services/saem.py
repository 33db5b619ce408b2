"""CARt(p) 模型的 SAEM 估计"""
import math
from typing import List, Optional, Sequence, Tuple
import numpy as np
from scipy import linalg, optimize, special
from app.core.errors import CartError, DomainError, EstimationError, InferenceError
from app.core.logger import get_logger
from app.models.fit import FitResult, LatentDraw, LouisAccumulators, SaemConfig, SuffStats, memoryless_cutoff
from app.models.series import CensoredSeries, ModelSpec, Theta
from app.services.ar_structure import is_stationary, lag_covariates, lag_matrix, observed_loglik_uncensored
from app.services.inference import louis_update, observed_information, standard_errors
from app.services.sampler import PartitionCache, RngStream, draw_latent_block

logger = get_logger('saem')

# sigma2 的正值下限
SIGMA2_FLOOR = 1e-12
# 求解前加到 p×p 系统对角线上的抖动比例（乘以迹）
SYSTEM_JITTER = 1e-10
# 相对变化分母中的偏移，避免接近零的参数
CHANGE_OFFSET = 1e-3
# 初始自由度
NU_START = 10.0
# nu 估计在边界 5% 以内时标准误不可靠
NU_FRAGILE_MARGIN = 0.05


def smoothing_weight(k: int, c: float, W: int) -> float:
    """平滑权重 delta_k：前 floor(cW) 次为 1，此后为 1/(k - floor(cW))

    Args:
        k: 迭代序号（1 起始）
        c: 无记忆阶段比例
        W: 最大迭代次数

    Returns:
        delta_k
    """
    if not 1 <= k <= W:
        raise DomainError(f"迭代序号 k={k} 必须位于 [1, {W}]")
    cutoff = memoryless_cutoff(c, W)
    if k <= cutoff:
        return 1.0
    return 1.0 / (k - cutoff)


def _draw_statistics(draw: LatentDraw, p: int) -> Tuple[float, float, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    u = draw.u
    y = draw.y_full[p:]
    Y = lag_matrix(draw.y_full, p)
    uy = u * y
    uyvec = u[:, None] * Y
    return float(np.sum(np.log(u))), float(uy @ y), uy, Y.T @ uy, uyvec, Y.T @ uyvec


def sa_update(prev: SuffStats, draws: Sequence[LatentDraw], delta: float,
              miss_positions: Optional[Sequence[int]] = None) -> SuffStats:
    """充分统计量的随机逼近更新 s_new = s_prev + delta (mc_mean - s_prev)

    Args:
        prev: 上一次迭代的统计量
        draws: 本次迭代的 M 组抽样
        delta: 平滑权重
        miss_positions: 删失项在序列中的位置，用于更新填补值

    Returns:
        更新后的 SuffStats
    """
    if not draws:
        raise DomainError("draws 不能为空")
    if not 0 < delta <= 1:
        raise DomainError(f"delta 必须位于 (0, 1]: {delta}")
    p = prev.uyy_hat.size
    positions = np.asarray(miss_positions if miss_positions is not None else [], dtype=np.int64)

    M = len(draws)
    u_sum = np.zeros_like(prev.u_hat)
    logu_sum = uy2_sum = 0.0
    uy_sum = np.zeros_like(prev.uy_hat)
    uyy_sum = np.zeros_like(prev.uyy_hat)
    uyvec_sum = np.zeros_like(prev.uyvec_hat)
    uy2mat_sum = np.zeros_like(prev.uy2mat_hat)
    ym_sum = np.zeros_like(prev.ym_hat)
    for draw in draws:
        logu, uy2, uy, uyy, uyvec, uy2mat = _draw_statistics(draw, p)
        u_sum += draw.u
        logu_sum += logu
        uy2_sum += uy2
        uy_sum += uy
        uyy_sum += uyy
        uyvec_sum += uyvec
        uy2mat_sum += uy2mat
        if positions.size:
            ym_sum += draw.y_full[positions]

    def step(old, total):
        return old + delta * (total / M - old)

    uy2mat = step(prev.uy2mat_hat, uy2mat_sum)
    return SuffStats(
        u_hat=step(prev.u_hat, u_sum),
        logu_hat=float(step(prev.logu_hat, logu_sum)),
        uy2_hat=float(step(prev.uy2_hat, uy2_sum)),
        uy_hat=step(prev.uy_hat, uy_sum),
        uyy_hat=step(prev.uyy_hat, uyy_sum),
        uyvec_hat=step(prev.uyvec_hat, uyvec_sum),
        uy2mat_hat=0.5 * (uy2mat + uy2mat.T),
        ym_hat=step(prev.ym_hat, ym_sum),
    )


def starred_stats(stats: SuffStats, beta, X) -> Tuple[float, np.ndarray, np.ndarray]:
    """以 x_i'beta 与 X_(i,p) beta 中心化的三个统计量

    Args:
        stats: 充分统计量
        beta: 回归系数
        X: n×q 协变量

    Returns:
        (uy2_star, uyy_star, uy2mat_star)
    """
    p = stats.uyy_hat.size
    xb = np.asarray(X, dtype=float) @ np.asarray(beta, dtype=float)
    a = xb[p:]
    B = lag_matrix(xb, p)
    if a.size != stats.u_hat.size:
        raise DomainError(f"X 的行数与统计量不一致: {a.size + p} vs {stats.u_hat.size + p}")
    ua = stats.u_hat * a
    uy2_star = stats.uy2_hat - 2.0 * (a @ stats.uy_hat) + ua @ a
    uyy_star = stats.uyy_hat - stats.uyvec_hat.T @ a - B.T @ stats.uy_hat + B.T @ ua
    cross = stats.uyvec_hat.T @ B
    uy2mat_star = stats.uy2mat_hat - cross - cross.T + (B.T * stats.u_hat) @ B
    return float(uy2_star), uyy_star, 0.5 * (uy2mat_star + uy2mat_star.T)


def _solve_jittered(A: np.ndarray, b: np.ndarray, what: str) -> np.ndarray:
    dim = A.shape[0]
    scale = float(np.trace(A)) / dim
    # 退化序列的系统全为零，此时按单位尺度加抖动，解为 0
    if not scale > 0:
        scale = 1.0
    A = A + SYSTEM_JITTER * scale * np.eye(dim)
    try:
        solution = linalg.solve(A, b, assume_a='sym')
    except (linalg.LinAlgError, ValueError) as e:
        raise EstimationError(f"{what} 线性系统奇异: {e}") from e
    if not np.all(np.isfinite(solution)):
        raise EstimationError(f"{what} 的解含有非有限值", details={'system': what})
    return solution


def _weighted_residual_sum(uy2_star: float, uyy_star: np.ndarray, uy2mat_star: np.ndarray, phi) -> float:
    return float(uy2_star - 2.0 * (phi @ uyy_star) + phi @ uy2mat_star @ phi)


def cm_step(stats: SuffStats, theta_prev: Theta, X, nu_bounds: Tuple[float, float]) -> Theta:
    """条件极大化步，按 phi -> sigma2 -> beta -> nu 的顺序更新

    Args:
        stats: 当前充分统计量
        theta_prev: 上一次迭代的参数
        X: n×q 协变量
        nu_bounds: nu 的搜索区间

    Returns:
        新参数
    """
    X = np.asarray(X, dtype=float)
    p = stats.uyy_hat.size
    m = stats.u_hat.size

    uy2_star, uyy_star, uy2mat_star = starred_stats(stats, theta_prev.beta, X)
    phi = _solve_jittered(uy2mat_star, uyy_star, "phi")
    sigma2 = max(_weighted_residual_sum(uy2_star, uyy_star, uy2mat_star, phi) / m, SIGMA2_FLOOR)

    # alpha_i = x_i - X_(i,p)' phi
    alpha = X[p:] - np.einsum('ijk,j->ik', lag_covariates(X, p), phi)
    lhs = (alpha.T * stats.u_hat) @ alpha
    rhs = alpha.T @ (stats.uy_hat - stats.uyvec_hat @ phi)
    beta = _solve_jittered(lhs, rhs, "beta")

    nu = maximize_nu(stats.logu_hat, stats.u_hat_sum, m, nu_bounds)
    return Theta(beta=beta, phi=phi, sigma2=sigma2, nu=nu)


def g_nu(nu: float, logu_hat: float, u_hat_sum: float, m: int) -> float:
    """Q 函数中只与 nu 有关的部分"""
    if not nu > 0:
        raise DomainError(f"nu 必须为正数: {nu}")
    return 0.5 * m * (nu * math.log(0.5 * nu) - 2.0 * special.gammaln(0.5 * nu)) + 0.5 * nu * (logu_hat - u_hat_sum)


def maximize_nu(logu_hat: float, u_hat_sum: float, m: int, bounds: Tuple[float, float]) -> float:
    """在区间内最大化 g_nu，极大点在区间外时返回边界

    Args:
        logu_hat: sum log u 的逼近值
        u_hat_sum: sum u 的逼近值
        m: n - p
        bounds: 搜索区间

    Returns:
        nu 的估计
    """
    lo, hi = bounds
    if not 0 < lo < hi:
        raise DomainError(f"nu 的搜索区间无效: {bounds}")

    def objective(nu: float) -> float:
        return -g_nu(nu, logu_hat, u_hat_sum, m)

    result = optimize.minimize_scalar(objective, bounds=(lo, hi), method='bounded', options={'xatol': 1e-8})
    best, best_value = float(result.x), float(result.fun)
    # 有界 Brent 不会精确落在端点上
    for edge in (lo, hi):
        value = objective(edge)
        if value < best_value:
            best, best_value = edge, value
    return float(min(max(best, lo), hi))


def q_function(theta: Theta, stats: SuffStats, X) -> float:
    """由充分统计量组装的 Q(theta)，省略与 theta 无关的常数"""
    m = stats.u_hat.size
    uy2_star, uyy_star, uy2mat_star = starred_stats(stats, theta.beta, X)
    rss = _weighted_residual_sum(uy2_star, uyy_star, uy2mat_star, theta.phi)
    return (-0.5 * m * math.log(theta.sigma2) - 0.5 * rss / theta.sigma2
            + g_nu(theta.nu, stats.logu_hat, stats.u_hat_sum, m))


def initial_theta(data: CensoredSeries, spec: ModelSpec, nu_bounds: Tuple[float, float] = (1.01, 150.0)) -> Theta:
    """OLS 加 Yule-Walker 的初值

    删失项先用最近的有限界替换（两端无界时用观测中位数）。

    Args:
        data: 删失序列
        spec: 模型阶数
        nu_bounds: nu 的取值区间

    Returns:
        初始参数
    """
    p = spec.p
    y0 = PartitionCache(data, p).base
    beta, *_ = np.linalg.lstsq(data.X, y0, rcond=None)
    resid = y0 - data.X @ beta
    centered = resid - resid.mean()
    n = centered.size
    acov = np.array([centered[:n - k] @ centered[k:] / n for k in range(p + 1)])

    phi = np.zeros(p)
    sigma2 = float(acov[0])
    if acov[0] > 0:
        try:
            candidate = linalg.solve_toeplitz(acov[:p], acov[1:p + 1])
            candidate_sigma2 = float(acov[0] - candidate @ acov[1:p + 1])
            if is_stationary(candidate) and candidate_sigma2 > 0:
                phi, sigma2 = candidate, candidate_sigma2
        except linalg.LinAlgError:
            logger.warning("Yule-Walker 方程奇异，phi 初值取 0")
    if sigma2 <= 0:
        sigma2 = 1.0
    nu = min(max(NU_START, nu_bounds[0]), nu_bounds[1])
    return Theta(beta=beta, phi=phi, sigma2=sigma2, nu=nu)


def relative_change(new: np.ndarray, old: np.ndarray) -> float:
    """max_j |new_j - old_j| / (|old_j| + 1e-3)"""
    return float(np.max(np.abs(new - old) / (np.abs(old) + CHANGE_OFFSET)))


def fit(data: CensoredSeries, spec: ModelSpec, config: SaemConfig) -> FitResult:
    """SAEM 拟合 CARt(p) 模型

    Args:
        data: 删失序列
        spec: 模型阶数，spec.q 必须等于协变量列数
        config: 算法参数

    Returns:
        FitResult
    """
    spec.check_length(data.n)
    if data.q != spec.q:
        raise DomainError(f"协变量列数 {data.q} 与 q={spec.q} 不一致")
    p, X = spec.p, data.X
    cache = PartitionCache(data, p)
    m, d = cache.m, spec.dim
    rng = RngStream(config.seed, config.stream_id)
    cutoff = config.memoryless_iterations

    theta = initial_theta(data, spec, config.nu_bounds)
    stats = SuffStats.zeros(m, p, cache.n_missing)
    acc = LouisAccumulators.zeros(d)
    u = np.ones(m)
    ym = None
    theta_trace: List[np.ndarray] = []
    q_trace: List[float] = []
    converged = False
    calm = 0
    k = 0

    logger.info(f"开始 SAEM 拟合: n={data.n}, p={p}, q={spec.q}, 删失数={cache.n_missing}, "
                f"M={config.M}, W={config.W}, c={config.c}")
    for k in range(1, config.W + 1):
        delta = smoothing_weight(k, config.c, config.W)
        try:
            draws = draw_latent_block(theta, data, cache, u, config.M, config.inner_sweeps, rng, ym)
            stats = sa_update(stats, draws, delta, cache.miss_positions)
            acc = louis_update(acc, draws, theta, X, delta)
            new_theta = cm_step(stats, theta, X, config.nu_bounds)
        except EstimationError as e:
            raise EstimationError(f"第 {k} 次迭代失败: {e.message}", iteration=k, details=e.details) from e
        except CartError as e:
            raise EstimationError(f"第 {k} 次迭代失败: {e.message}", iteration=k,
                                  details={'cause': e.code, **e.details}) from e

        change = relative_change(new_theta.as_vector(), theta.as_vector())
        theta = new_theta
        theta_trace.append(theta.as_vector())
        q_trace.append(q_function(theta, stats, X))
        u = draws[-1].u
        ym = draws[-1].y_full[cache.miss_positions]
        logger.debug(f"迭代 {k}: delta={delta:.4g}, 相对变化={change:.3e}, nu={theta.nu:.4g}, sigma2={theta.sigma2:.4g}")

        if k > cutoff:
            calm = calm + 1 if change < config.tol else 0
            if calm >= config.patience:
                converged = True
                break

    if converged:
        logger.info(f"SAEM 在第 {k} 次迭代收敛")
    else:
        logger.warning(f"SAEM 达到最大迭代次数 {config.W} 仍未收敛")

    H = observed_information(acc)
    try:
        se, se_defined = standard_errors(H)
    except InferenceError as e:
        logger.warning(f"信息矩阵不可逆，标准误不可用: {e.message}")
        se, se_defined = np.full(d, np.nan), np.zeros(d, dtype=bool)

    lo, hi = config.nu_bounds
    fragile = bool(theta.nu <= lo * (1 + NU_FRAGILE_MARGIN) or theta.nu >= hi * (1 - NU_FRAGILE_MARGIN))

    loglik = aic = bic = None
    if cache.n_missing == 0:
        loglik = observed_loglik_uncensored(theta, data.y, X)
        aic = -2.0 * loglik + 2.0 * d
        bic = -2.0 * loglik + d * math.log(m)

    return FitResult(
        theta=theta,
        std_errors=se,
        se_defined=se_defined,
        info_matrix=H,
        imputed=stats.ym_hat,
        imputed_index=cache.miss_positions,
        theta_trace=np.array(theta_trace),
        q_trace=np.array(q_trace),
        iterations_run=k,
        converged=converged,
        u_hat=stats.u_hat,
        nu_se_fragile=fragile,
        loglik=loglik,
        aic=aic,
        bic=bic,
    )

"""E 步的随机抽样：Gamma、截断正态以及潜变量的链式 Gibbs 抽样"""
import math
from typing import List, Optional, Sequence, Tuple
import numpy as np
from scipy import linalg, special
from app.core.errors import DomainError
from app.models.fit import LatentDraw
from app.models.series import CensoredSeries, Theta
from app.services.conditional import (
    cholesky_with_jitter,
    conditional_gaussian_moments,
    gamma_full_conditionals,
    partition_and_condition,
)

# 进入尾部采样的标准化阈值
TAIL_THRESHOLD = 5.0


class RngStream:
    """可复现的随机数流

    (seed, stream_id, substream) 相同则抽样序列逐位相同；不同 stream_id 之间统计独立。
    """

    def __init__(self, seed: int, stream_id: int = 0, substream: Tuple[int, ...] = ()):
        if seed < 0 or stream_id < 0:
            raise DomainError(f"seed 与 stream_id 必须非负: seed={seed}, stream_id={stream_id}")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.substream = tuple(int(s) for s in substream)
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,) + self.substream)
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def child(self, index: int) -> "RngStream":
        """派生子流，用于同一副本内的不同用途（数据、删失、拟合）"""
        return RngStream(self.seed, self.stream_id, self.substream + (index,))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, substream={self.substream})"


def sample_gamma(shape, rate, rng: RngStream, size=None):
    """形状-速率参数化的 Gamma 抽样

    Args:
        shape: 形状参数
        rate: 速率参数，可为数组
        rng: 随机数流
        size: 输出形状

    Returns:
        抽样值
    """
    shape_arr = np.asarray(shape, dtype=float)
    rate_arr = np.asarray(rate, dtype=float)
    if np.any(shape_arr <= 0) or np.any(rate_arr <= 0) or np.any(np.isnan(rate_arr)):
        raise DomainError(f"Gamma 参数必须为正数: shape={shape}, rate={rate}")
    draw = rng.generator.gamma(shape_arr, 1.0 / rate_arr, size=size)
    return draw if np.ndim(draw) else float(draw)


def _robert_tail(alpha: float, beta: float, gen: np.random.Generator) -> float:
    """[alpha, beta] 上的标准正态，alpha 位于远端尾部，指数提议拒绝抽样"""
    lam = 0.5 * (alpha + math.sqrt(alpha * alpha + 4.0))
    while True:
        z = alpha + gen.exponential(1.0 / lam)
        if z > beta:
            continue
        if gen.random() <= math.exp(-0.5 * (z - lam) ** 2):
            return z


def _uniform_narrow(alpha: float, beta: float, gen: np.random.Generator) -> float:
    """窄区间上以均匀分布为提议的拒绝抽样"""
    peak = min(max(0.0, alpha), beta)
    while True:
        z = alpha + (beta - alpha) * gen.random()
        if gen.random() <= math.exp(0.5 * (peak * peak - z * z)):
            return z


def _standard_truncated(alpha: float, beta: float, gen: np.random.Generator) -> float:
    """标准正态限制在 [alpha, beta] 上的一次抽样"""
    if alpha == -math.inf and beta == math.inf:
        return gen.standard_normal()
    flip = beta <= 0.0
    if flip:
        alpha, beta = -beta, -alpha
    # 此后区间或跨过 0，或完全位于正半轴
    near = max(alpha, 0.0)
    if (beta - alpha) * (near + 1.0) < 1.0:
        z = _uniform_narrow(alpha, beta, gen)
    elif alpha >= TAIL_THRESHOLD:
        z = _robert_tail(alpha, beta, gen)
    elif alpha > 0.0:
        # 正半轴用生存函数反演以保留尾部精度
        qa = special.ndtr(-alpha)
        qb = special.ndtr(-beta)
        z = -special.ndtri(qb + (qa - qb) * gen.random())
    else:
        pa = special.ndtr(alpha)
        pb = special.ndtr(beta)
        z = special.ndtri(pa + (pb - pa) * gen.random())
    z = min(max(float(z), alpha), beta)
    return -z if flip else z


def sample_truncated_normal_1d(mu, sigma2, a, b, rng: RngStream, size=None):
    """N(mu, sigma2) 限制在 [a, b] 上的抽样

    区间主体用逆 CDF；区间位于 5 个标准差之外时用指数提议拒绝抽样。

    Args:
        mu: 均值
        sigma2: 方差
        a: 下界，可为 -inf
        b: 上界，可为 +inf
        rng: 随机数流
        size: 抽样个数，None 时返回标量

    Returns:
        抽样值
    """
    if not sigma2 > 0:
        raise DomainError(f"sigma2 必须为正数: {sigma2}")
    if not a < b:
        raise DomainError(f"截断区间无效: a={a}, b={b}")
    sd = math.sqrt(sigma2)
    alpha = (a - mu) / sd
    beta = (b - mu) / sd
    gen = rng.generator
    if size is None:
        return float(mu + sd * _standard_truncated(alpha, beta, gen))
    draws = np.fromiter((_standard_truncated(alpha, beta, gen) for _ in range(int(np.prod(size)))),
                        dtype=float, count=int(np.prod(size)))
    return mu + sd * draws.reshape(size)


def sample_truncated_mvn_gibbs(mu, Sigma, lower, upper, init, sweeps: int, rng: RngStream) -> np.ndarray:
    """截断多元正态的坐标 Gibbs 抽样

    每个坐标的满条件由精度矩阵给出：均值 mu_j - (P_j,-j (x_-j - mu_-j)) / P_jj，方差 1 / P_jj。

    Args:
        mu: 均值向量
        Sigma: 正定协方差矩阵
        lower: 下界
        upper: 上界
        init: 起始点，必须位于区间内
        sweeps: 完整扫描次数
        rng: 随机数流

    Returns:
        最后一次扫描后的状态
    """
    mu = np.asarray(mu, dtype=float).reshape(-1)
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    lower = np.asarray(lower, dtype=float).reshape(-1)
    upper = np.asarray(upper, dtype=float).reshape(-1)
    state = np.array(init, dtype=float).reshape(-1)
    d = mu.size
    if Sigma.shape != (d, d) or lower.size != d or upper.size != d or state.size != d:
        raise DomainError(f"截断多元正态的维度不一致: d={d}")
    if sweeps < 1:
        raise DomainError(f"sweeps 必须为正整数: {sweeps}")
    if np.any(state < lower) or np.any(state > upper):
        raise DomainError("Gibbs 起始点不在截断区域内")
    if d == 0:
        return state
    if d == 1:
        return np.array([sample_truncated_normal_1d(mu[0], Sigma[0, 0], lower[0], upper[0], rng)])

    factor = cholesky_with_jitter(Sigma, "Sigma_star")
    precision = linalg.cho_solve((factor, True), np.eye(d))
    cond_sd = 1.0 / np.sqrt(np.diag(precision))
    gen = rng.generator
    resid = state - mu
    for _ in range(sweeps):
        for j in range(d):
            pjj = precision[j, j]
            shift = (precision[j] @ resid - pjj * resid[j]) / pjj
            mean_j = mu[j] - shift
            sd_j = cond_sd[j]
            z = _standard_truncated((lower[j] - mean_j) / sd_j, (upper[j] - mean_j) / sd_j, gen)
            value = min(max(mean_j + sd_j * z, lower[j]), upper[j])
            resid[j] = value - mu[j]
    return mu + resid


class PartitionCache:
    """删失模式在整个拟合中不变，划分结果只计算一次"""

    def __init__(self, data: CensoredSeries, p: int):
        data.check_initial_observed(p)
        self.p = p
        self.m = data.n - p
        self.cens_mask = np.asarray(data.cens[p:], dtype=bool)
        self.miss_index = np.flatnonzero(self.cens_mask)
        # 序列中的绝对位置（0 起始）
        self.miss_positions = self.miss_index + p
        self.obs_positions = np.flatnonzero(~self.cens_mask) + p
        self.lower = data.lower[self.miss_positions]
        self.upper = data.upper[self.miss_positions]
        self.y_first_p = data.y[:p].copy()
        self.y_obs = data.y[self.obs_positions].copy()
        self.base = data.y.copy()
        self.base[self.miss_positions] = self.initial_fill(data)

    @property
    def n_missing(self) -> int:
        return int(self.miss_index.size)

    def initial_fill(self, data: CensoredSeries) -> np.ndarray:
        """删失项的初始值：两端有限时取区间中点，单侧有限时取该界，两端无界时取观测中位数"""
        fill = np.empty(self.n_missing)
        observed = data.y[~data.cens]
        median = float(np.median(observed)) if observed.size else 0.0
        for i, (lo, hi) in enumerate(zip(self.lower, self.upper)):
            if np.isfinite(lo) and np.isfinite(hi):
                fill[i] = 0.5 * (lo + hi)
            elif np.isfinite(hi):
                fill[i] = hi
            elif np.isfinite(lo):
                fill[i] = lo
            else:
                fill[i] = median
        return fill

    def merge(self, ym) -> np.ndarray:
        """将删失块的取值并入完整序列"""
        y_full = self.base.copy()
        y_full[self.miss_positions] = ym
        return y_full


def draw_latent_block(theta: Theta, data: CensoredSeries, cache: PartitionCache, u_init, M: int,
                      inner_sweeps: int, rng: RngStream, ym_init: Optional[Sequence[float]] = None
                      ) -> List[LatentDraw]:
    """链式 Gibbs 抽样 M 组潜变量 (y_m, u)

    Args:
        theta: 当前参数
        data: 删失序列
        cache: 删失划分缓存
        u_init: 链的起始混合权重，长度 n-p
        M: 样本数
        inner_sweeps: 每次截断正态抽样的扫描次数
        rng: 随机数流
        ym_init: 删失块的起始值，默认取 cache 中的初始填补

    Returns:
        M 个 LatentDraw
    """
    u = np.array(u_init, dtype=float).reshape(-1)
    if u.size != cache.m or np.any(u <= 0):
        raise DomainError(f"u_init 必须是长度 {cache.m} 的正向量")
    if M < 1:
        raise DomainError(f"M 必须为正整数: {M}")
    ym = cache.base[cache.miss_positions].copy() if ym_init is None else np.array(ym_init, dtype=float)

    draws: List[LatentDraw] = []
    for _ in range(M):
        if cache.n_missing:
            gc = conditional_gaussian_moments(theta, u, cache.y_first_p, data.X)
            pc = partition_and_condition(gc, cache.cens_mask, cache.y_obs)
            ym = sample_truncated_mvn_gibbs(pc.mu_star, pc.sigma_star, cache.lower, cache.upper,
                                            ym, inner_sweeps, rng)
        y_full = cache.merge(ym)
        shape, rates = gamma_full_conditionals(theta, y_full, data.X)
        u = sample_gamma(shape, rates, rng, size=rates.shape)
        # 极小的 u 会使协方差失去正定性
        u = np.maximum(u, np.finfo(float).tiny)
        draws.append(LatentDraw(y_full=y_full, u=u))
    return draws

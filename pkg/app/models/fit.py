from typing import List, Optional, Tuple
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from app.core.errors import DomainError
from app.models.arrays import FloatArray, IndexArray, BoolArray
from app.models.series import Theta


def memoryless_cutoff(c: float, W: int) -> int:
    """无记忆阶段的迭代数 floor(cW)，容忍浮点误差"""
    return int(np.floor(c * W + 1e-9))


class LatentDraw(BaseModel):
    """一次 Gibbs 抽样得到的完整序列与混合权重"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    y_full: FloatArray = Field(..., description="观测值与删失抽样值合并后的序列，长度 n")
    u: FloatArray = Field(..., description="混合权重，长度 n-p")


class SuffStats(BaseModel):
    """SAEM 随机逼近的充分统计量"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    u_hat: FloatArray = Field(..., description="u_i 的逼近值，长度 n-p")
    logu_hat: float = Field(..., description="sum log u_i")
    uy2_hat: float = Field(..., description="sum u_i y_i^2")
    uy_hat: FloatArray = Field(..., description="u_i y_i，长度 n-p")
    uyy_hat: FloatArray = Field(..., description="sum u_i y_i y_(i,p)，长度 p")
    uyvec_hat: FloatArray = Field(..., description="u_i y_(i,p)，(n-p)×p")
    uy2mat_hat: FloatArray = Field(..., description="sum u_i y_(i,p) y_(i,p)'，p×p")
    ym_hat: FloatArray = Field(..., description="删失项的填补值，长度 n_m")

    @classmethod
    def zeros(cls, m: int, p: int, n_missing: int) -> "SuffStats":
        """全零初值，配合首次迭代 delta=1 使用"""
        return cls(
            u_hat=np.zeros(m), logu_hat=0.0, uy2_hat=0.0, uy_hat=np.zeros(m),
            uyy_hat=np.zeros(p), uyvec_hat=np.zeros((m, p)), uy2mat_hat=np.zeros((p, p)),
            ym_hat=np.zeros(n_missing),
        )

    @property
    def u_hat_sum(self) -> float:
        return float(np.sum(self.u_hat))


class SaemConfig(BaseModel):
    """SAEM 算法参数"""
    M: int = Field(default=20, description="每次迭代的蒙特卡洛样本数")
    W: int = Field(default=400, description="最大迭代次数")
    c: float = Field(default=0.25, description="无记忆阶段比例")
    inner_sweeps: int = Field(default=5, description="截断正态 Gibbs 扫描次数")
    tol: float = Field(default=1e-4, description="参数相对变化容差")
    patience: int = Field(default=3, description="连续满足容差的迭代次数")
    nu_bounds: Tuple[float, float] = Field(default=(1.01, 150.0), description="自由度搜索区间")
    seed: int = Field(default=20240101, description="随机数种子")
    stream_id: int = Field(default=0, description="随机数流编号")

    @model_validator(mode="after")
    def _check_ranges(self):
        if not 0.0 <= self.c <= 1.0:
            raise DomainError(f"c 必须位于 [0, 1]: {self.c}")
        if self.M < 1 or self.W < 1 or self.inner_sweeps < 1 or self.patience < 1:
            raise DomainError("M、W、inner_sweeps 与 patience 必须为正整数")
        if not self.tol > 0:
            raise DomainError(f"tol 必须为正数: {self.tol}")
        lo, hi = self.nu_bounds
        if not 0 < lo < hi:
            raise DomainError(f"nu_bounds 无效: {self.nu_bounds}")
        if self.seed < 0 or self.stream_id < 0:
            raise DomainError("seed 与 stream_id 必须非负")
        return self

    @property
    def memoryless_iterations(self) -> int:
        """floor(cW)"""
        return memoryless_cutoff(self.c, self.W)

    @classmethod
    def from_settings(cls, settings, **overrides) -> "SaemConfig":
        """由 SaemSettings 构造，overrides 中为 None 的项忽略"""
        values = {
            'M': settings.m, 'W': settings.max_iter, 'c': settings.cutoff,
            'inner_sweeps': settings.inner_sweeps, 'tol': settings.tol, 'patience': settings.patience,
            'nu_bounds': (settings.nu_lower, settings.nu_upper),
            'seed': settings.seed, 'stream_id': settings.stream_id,
        }
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)


class LouisAccumulators(BaseModel):
    """Louis 方法的随机逼近量 Delta 与 G"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    Delta: FloatArray = Field(..., description="得分均值，长度 d")
    G: FloatArray = Field(..., description="Hessian 加得分外积的均值，d×d")

    @classmethod
    def zeros(cls, d: int) -> "LouisAccumulators":
        return cls(Delta=np.zeros(d), G=np.zeros((d, d)))


class FitResult(BaseModel):
    """拟合结果"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    theta: Theta = Field(..., description="参数估计")
    std_errors: FloatArray = Field(..., description="标准误，未定义处为 NaN")
    se_defined: BoolArray = Field(..., description="标准误是否有定义")
    info_matrix: FloatArray = Field(..., description="观测信息矩阵 H")
    imputed: FloatArray = Field(..., description="删失项的最终填补值")
    imputed_index: IndexArray = Field(..., description="填补值在序列中的位置（0 起始）")
    theta_trace: FloatArray = Field(..., description="每次迭代的参数向量")
    q_trace: FloatArray = Field(..., description="每次迭代 CM 步后的 Q 值")
    iterations_run: int = Field(..., description="实际迭代次数")
    converged: bool = Field(..., description="是否在 W 之前满足停止准则")
    u_hat: FloatArray = Field(..., description="最终的混合权重逼近值")
    nu_se_fragile: bool = Field(default=False, description="nu 估计接近边界，标准误不可靠")
    loglik: Optional[float] = Field(default=None, description="无删失时的观测对数似然")
    aic: Optional[float] = Field(default=None, description="AIC")
    bic: Optional[float] = Field(default=None, description="BIC")

    def parameter_names(self) -> List[str]:
        return self.theta.parameter_names()

    def complete_series(self, y) -> np.ndarray:
        """以填补值替换删失项后的完整序列"""
        y_complete = np.array(y, dtype=float)
        y_complete[self.imputed_index] = self.imputed
        return y_complete

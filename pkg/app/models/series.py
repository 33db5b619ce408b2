from typing import List
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from app.core.errors import DomainError, PreconditionError
from app.models.arrays import FloatArray, BoolArray


class ModelSpec(BaseModel):
    """CARt(p) 模型阶数"""
    p: int = Field(..., description="自回归阶数")
    q: int = Field(..., description="回归协变量个数")

    @model_validator(mode="after")
    def _check_orders(self):
        if self.p < 1 or self.q < 1:
            raise DomainError(f"p 和 q 必须为正整数: p={self.p}, q={self.q}")
        return self

    @property
    def dim(self) -> int:
        """参数向量维数 q + p + 2"""
        return self.q + self.p + 2

    def check_length(self, n: int) -> None:
        """检查序列长度足以识别参数"""
        if n <= self.p + self.q:
            raise PreconditionError(
                f"序列长度 n={n} 必须大于 p+q={self.p + self.q}",
                {'n': n, 'p': self.p, 'q': self.q},
            )


class Theta(BaseModel):
    """参数向量 (beta, phi, sigma2, nu)"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    beta: FloatArray = Field(..., description="回归系数，长度 q")
    phi: FloatArray = Field(..., description="自回归系数，长度 p")
    sigma2: float = Field(..., description="新息尺度参数")
    nu: float = Field(..., description="自由度，+inf 表示正态新息")

    @field_validator('beta', 'phi')
    @classmethod
    def _check_vector(cls, value: np.ndarray) -> np.ndarray:
        if value.ndim != 1 or value.size == 0:
            raise DomainError("beta 和 phi 必须是非空一维向量")
        return value

    @field_validator('sigma2', 'nu')
    @classmethod
    def _check_positive(cls, value: float) -> float:
        if not value > 0:
            raise DomainError(f"sigma2 和 nu 必须为正数: {value}")
        return float(value)

    @property
    def p(self) -> int:
        return self.phi.size

    @property
    def q(self) -> int:
        return self.beta.size

    @property
    def is_stationary(self) -> bool:
        """模拟所需的平稳性标志"""
        from app.services.ar_structure import is_stationary
        return is_stationary(self.phi)

    def as_vector(self) -> np.ndarray:
        """按 (beta, phi, sigma2, nu) 顺序拼接"""
        return np.concatenate([self.beta, self.phi, [self.sigma2, self.nu]])

    @classmethod
    def from_vector(cls, vector, q: int, p: int) -> "Theta":
        vector = np.asarray(vector, dtype=float)
        if vector.size != q + p + 2:
            raise DomainError(f"参数向量长度应为 {q + p + 2}，实际为 {vector.size}")
        return cls(beta=vector[:q], phi=vector[q:q + p], sigma2=vector[q + p], nu=vector[q + p + 1])

    def parameter_names(self) -> List[str]:
        return parameter_names(self.q, self.p)


def parameter_names(q: int, p: int) -> List[str]:
    """参数名称列表，与 as_vector 的顺序一致"""
    return ([f"beta{j}" for j in range(q)]
            + [f"phi{j + 1}" for j in range(p)]
            + ["sigma2", "nu"])


class CensoredSeries(BaseModel):
    """带删失区间的响应序列及协变量"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    y: FloatArray = Field(..., description="观测值或删失界占位，缺失为 NaN")
    lower: FloatArray = Field(..., description="删失区间下界 V_t1，可为 -inf")
    upper: FloatArray = Field(..., description="删失区间上界 V_t2，可为 +inf")
    cens: BoolArray = Field(..., description="删失指示 C_t")
    X: FloatArray = Field(..., description="n×q 协变量矩阵")

    @model_validator(mode="after")
    def _check_consistency(self):
        n = self.y.size
        if self.X.ndim == 1:
            self.X = self.X.reshape(-1, 1)
        for name in ('lower', 'upper', 'cens'):
            if getattr(self, name).shape != (n,):
                raise DomainError(f"{name} 的长度必须等于 n={n}")
        if self.X.ndim != 2 or self.X.shape[0] != n:
            raise DomainError(f"X 必须是 {n} 行的矩阵")

        obs = ~self.cens
        if np.any(self.lower[obs] != self.y[obs]) or np.any(self.upper[obs] != self.y[obs]):
            bad = int(np.flatnonzero(obs & ((self.lower != self.y) | (self.upper != self.y)))[0])
            raise DomainError(f"第 {bad + 1} 行为观测值，但区间界与 y 不一致", {'row': bad + 1})
        if np.any(~np.isfinite(self.y[obs])):
            bad = int(np.flatnonzero(obs & ~np.isfinite(self.y))[0])
            raise DomainError(f"第 {bad + 1} 行为观测值，但 y 不是有限数", {'row': bad + 1})
        if np.any(self.lower[self.cens] >= self.upper[self.cens]):
            bad = int(np.flatnonzero(self.cens & (self.lower >= self.upper))[0])
            raise DomainError(f"第 {bad + 1} 行的删失区间无效", {'row': bad + 1})
        return self

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def q(self) -> int:
        return self.X.shape[1]

    @property
    def missing(self) -> np.ndarray:
        """区间为 (-inf, +inf) 的缺失观测"""
        return self.cens & np.isneginf(self.lower) & np.isposinf(self.upper)

    def check_initial_observed(self, p: int) -> None:
        """前 p 个观测必须完全观测"""
        censored = np.flatnonzero(self.cens[:p])
        if censored.size:
            row = int(censored[0]) + 1
            raise PreconditionError(
                f"前 p={p} 个观测必须完全观测: row {row} 为删失或缺失",
                {'row': row, 'p': p},
            )

    def censoring_summary(self) -> dict:
        """删失与缺失比例"""
        missing = self.missing
        return {
            'censored_rate': float(np.mean(self.cens & ~missing)),
            'missing_rate': float(np.mean(missing)),
            'total_rate': float(np.mean(self.cens)),
        }


class PsiWeights(BaseModel):
    """伴随矩阵及其幂次的 (1,1) 元素"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    c: FloatArray = Field(..., description="c[j] = (Phi^j)_11, j = 0..K")
    Phi: FloatArray = Field(..., description="p×p 伴随矩阵")

from typing import Any, Dict, List, Optional
from pydantic import BaseModel, Field


class ImputedValue(BaseModel):
    """删失项的填补值"""
    index: int = Field(..., description="序列中的位置（0 起始）")
    value: float = Field(..., description="最终迭代的填补值")


class ParameterEstimate(BaseModel):
    """单个参数的估计与 Wald 区间"""
    name: str = Field(..., description="参数名")
    estimate: float = Field(..., description="估计值")
    std_error: Optional[float] = Field(default=None, description="标准误，无定义时为 null")
    ci_lower: Optional[float] = Field(default=None, description="置信区间下界")
    ci_upper: Optional[float] = Field(default=None, description="置信区间上界")


class RunReport(BaseModel):
    """fit 命令输出的 JSON 报告"""
    p: int = Field(..., description="自回归阶数")
    q: int = Field(..., description="协变量个数")
    n: int = Field(..., description="序列长度")
    level: float = Field(default=0.95, description="置信水平")
    parameters: List[ParameterEstimate] = Field(..., description="参数估计")
    nu_se_fragile: bool = Field(default=False, description="nu 接近边界，标准误不可靠")
    info_matrix: List[List[float]] = Field(..., description="观测信息矩阵")
    imputed: List[ImputedValue] = Field(default_factory=list, description="填补值")
    y_complete: List[float] = Field(..., description="填补后的完整序列")
    X: List[List[float]] = Field(..., description="协变量矩阵")
    u_hat: List[float] = Field(..., description="最终的混合权重估计")
    residuals: List[float] = Field(..., description="分位数残差")
    theta_trace: List[List[float]] = Field(..., description="逐次迭代的参数")
    q_trace: List[float] = Field(..., description="逐次迭代的 Q 值")
    iterations_run: int = Field(..., description="迭代次数")
    converged: bool = Field(..., description="是否收敛")
    loglik: Optional[float] = Field(default=None, description="无删失时的对数似然")
    aic: Optional[float] = Field(default=None, description="AIC")
    bic: Optional[float] = Field(default=None, description="BIC")
    config: Dict[str, Any] = Field(..., description="实际使用的配置")
    seed: int = Field(..., description="随机数种子")
    dataset: Optional[str] = Field(default=None, description="数据文件路径")
    wall_clock_seconds: Optional[float] = Field(default=None, description="耗时，仅在 --record-timing 时记录")

    @property
    def estimates(self) -> List[float]:
        return [row.estimate for row in self.parameters]

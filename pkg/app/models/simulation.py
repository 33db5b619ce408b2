from typing import List, Optional
from pydantic import BaseModel, ConfigDict, Field, model_validator
from app.core.errors import DomainError
from app.models.series import Theta


class McDesign(BaseModel):
    """蒙特卡洛研究设计"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    replicates: int = Field(..., description="副本数")
    n: int = Field(..., description="序列长度")
    theta_true: Theta = Field(..., description="生成数据的真实参数，nu=inf 表示正态新息")
    lod: Optional[float] = Field(default=None, description="检测限，None 表示不删失")
    missing_frac: float = Field(default=0.20, description="删失观测中转为缺失的比例")
    perturbation: Optional[List[float]] = Field(default=None, description="最大值扰动倍数 vartheta 列表")
    seed: int = Field(default=20240101, description="随机数种子")
    burnin: int = Field(default=200, description="预热长度")
    max_redraws: int = Field(default=100, description="前 p 个观测被删失时的最大重抽次数")

    @model_validator(mode="after")
    def _check_design(self):
        if self.replicates < 1:
            raise DomainError(f"副本数必须至少为 1: {self.replicates}")
        if not self.theta_true.is_stationary:
            raise DomainError(f"真实 phi 非平稳: {self.theta_true.phi.tolist()}")
        if self.n <= self.theta_true.p + self.theta_true.q:
            raise DomainError(f"序列长度 n={self.n} 必须大于 p+q")
        if not 0.0 <= self.missing_frac <= 1.0:
            raise DomainError(f"missing_frac 必须位于 [0, 1]: {self.missing_frac}")
        if self.perturbation is not None and (not self.perturbation or min(self.perturbation) < 0):
            raise DomainError("perturbation 必须是非空的非负数列表")
        if self.burnin < 0 or self.max_redraws < 1 or self.seed < 0:
            raise DomainError("burnin、max_redraws 与 seed 取值无效")
        return self


class ReplicateRecord(BaseModel):
    """单个副本的拟合结果"""
    replicate: int = Field(..., description="副本编号，同时是随机数流编号")
    vartheta: Optional[float] = Field(default=None, description="扰动倍数")
    estimates: Optional[List[float]] = Field(default=None, description="参数估计")
    std_errors: Optional[List[Optional[float]]] = Field(default=None, description="标准误，未定义为 None")
    converged: bool = Field(default=False, description="是否收敛")
    iterations: int = Field(default=0, description="迭代次数")
    censored_rate: float = Field(default=0.0, description="删失（不含缺失）比例")
    missing_rate: float = Field(default=0.0, description="缺失比例")
    perturbed_index: Optional[int] = Field(default=None, description="被扰动观测的位置（0 起始）")
    influential_index: Optional[int] = Field(default=None, description="估计权重最小的位置（0 起始）")
    error: Optional[str] = Field(default=None, description="拟合失败时的错误信息")

    @property
    def failed(self) -> bool:
        return self.error is not None


class ParameterSummary(BaseModel):
    """单个参数的 MC 汇总"""
    parameter: str = Field(..., description="参数名")
    truth: float = Field(..., description="真实值")
    mc_mean: float = Field(..., description="估计均值")
    mc_sd: Optional[float] = Field(default=None, description="估计标准差，单个副本时无定义")
    im_se: Optional[float] = Field(default=None, description="信息矩阵标准误均值")
    cp: Optional[float] = Field(default=None, description="95% 置信区间覆盖率，仅 beta")
    mse: Optional[float] = Field(default=None, description="均方误差，真实值无穷时无定义")


class McSummary(BaseModel):
    """蒙特卡洛研究汇总"""
    parameters: List[ParameterSummary] = Field(..., description="逐参数汇总")
    replicates_ok: int = Field(..., description="成功的副本数")
    failures: int = Field(..., description="失败的副本数")
    censored_rate: float = Field(..., description="平均删失比例")
    missing_rate: float = Field(..., description="平均缺失比例")
    total_rate: float = Field(..., description="平均删失加缺失比例")
    vartheta: Optional[float] = Field(default=None, description="扰动倍数")
    di_percent: Optional[float] = Field(default=None, description="检出被扰动观测的百分比")
    nu_mean: Optional[float] = Field(default=None, description="nu 估计均值")
    sigma2_star_mean: Optional[float] = Field(default=None, description="新息方差估计均值")
    records: List[ReplicateRecord] = Field(default_factory=list, description="逐副本记录")

    def parameter(self, name: str) -> ParameterSummary:
        for row in self.parameters:
            if row.parameter == name:
                return row
        raise KeyError(name)

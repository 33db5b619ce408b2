from typing import Any, Dict, Optional
from app.models.response import ErrorResponse


class CartError(Exception):
    """所有领域错误的基类"""
    code = "cart_error"

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_response(self) -> ErrorResponse:
        """转换为错误响应模型"""
        return ErrorResponse(code=self.code, message=self.message, details=self.details or None)


class DomainError(CartError):
    """参数超出定义域或维度不一致"""
    code = "domain_error"


class PreconditionError(DomainError):
    """输入数据不满足拟合的前提条件"""
    code = "precondition_error"


class ConditioningError(CartError):
    """协方差矩阵数值奇异，无法条件化"""
    code = "conditioning_error"

    def __init__(self, message: str, pivot: int, details: Optional[Dict[str, Any]] = None):
        details = dict(details or {})
        details['pivot'] = pivot
        super().__init__(message, details)
        self.pivot = pivot


class EstimationError(CartError):
    """SAEM 迭代过程中的估计失败"""
    code = "estimation_error"

    def __init__(self, message: str, iteration: Optional[int] = None, details: Optional[Dict[str, Any]] = None):
        details = dict(details or {})
        if iteration is not None:
            details['iteration'] = iteration
        super().__init__(message, details)
        self.iteration = iteration


class InferenceError(CartError):
    """信息矩阵不可逆"""
    code = "inference_error"


class DatasetError(CartError):
    """数据文件格式错误"""
    code = "dataset_error"

    def __init__(self, message: str, row: Optional[int] = None, details: Optional[Dict[str, Any]] = None):
        details = dict(details or {})
        if row is not None:
            details['row'] = row
        super().__init__(message, details)
        self.row = row


class SimulationError(CartError):
    """模拟数据生成失败"""
    code = "simulation_error"


class CensoringRejected(SimulationError):
    """删失模式覆盖了前 p 个观测，需要重新生成序列"""
    code = "censoring_rejected"


class StudyError(CartError):
    """蒙特卡洛研究整体失败"""
    code = "study_error"

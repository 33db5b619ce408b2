from typing import Annotated
import numpy as np
from pydantic import BeforeValidator


def _as_float_array(value) -> np.ndarray:
    return np.array(value, dtype=float)


def _as_bool_array(value) -> np.ndarray:
    return np.array(value, dtype=bool)


def _as_index_array(value) -> np.ndarray:
    return np.array(value, dtype=np.int64).reshape(-1)


# pydantic 模型中的 numpy 数组字段，需配合 arbitrary_types_allowed 使用
FloatArray = Annotated[np.ndarray, BeforeValidator(_as_float_array)]
BoolArray = Annotated[np.ndarray, BeforeValidator(_as_bool_array)]
IndexArray = Annotated[np.ndarray, BeforeValidator(_as_index_array)]

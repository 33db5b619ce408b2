import json
import os
import re
from typing import List, Optional
import numpy as np
import pandas as pd
from app.core.config import config
from app.core.errors import DatasetError, DomainError
from app.models.report import RunReport
from app.models.series import CensoredSeries

# 17 位有效数字保证浮点数无损往返
FLOAT_FORMAT = '%.17g'
DATASET_HEAD = ['y', 'lower', 'upper', 'cens']
COVARIATE_PATTERN = re.compile(r'^x\d+$')


def _covariate_columns(columns: List[str], path: str) -> List[str]:
    names = [c for c in columns if COVARIATE_PATTERN.match(c)]
    if not names:
        raise DatasetError(f"{path} 中没有协变量列 x1..xq")
    return names


def _parse_cell(cell: str) -> float:
    if cell == '':
        return np.nan
    try:
        return float(cell)
    except ValueError:
        return np.nan


def _parse_column(frame: pd.DataFrame, name: str, path: str, allow_empty: bool = True) -> np.ndarray:
    """把字符串列转为浮点数，空单元格为 NaN，无法解析时报告行号（1 起始，不含表头）

    逐格用 float 解析，%.17g 写出的值可逐位还原。
    """
    raw = frame[name].str.strip()
    values = raw.map(_parse_cell).astype(float)
    bad = values.isna() & (raw != '')
    if not allow_empty:
        bad |= raw == ''
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0]) + 1
        raise DatasetError(f"{path} 第 {row} 行的 {name} 列无法解析: '{raw.iloc[row - 1]}'", row=row)
    return values.to_numpy(dtype=float)


class FileStorage:
    """数据集、报告与结果表格的文件读写"""

    def __init__(self, output_dir: Optional[str] = None):
        """初始化文件存储

        Args:
            output_dir: 默认输出目录，默认使用配置中的路径
        """
        self.output_dir = output_dir or config.storage.output_dir

    def resolve(self, path: str) -> str:
        """相对文件名放到默认输出目录下，并确保目录存在"""
        if not os.path.dirname(path):
            path = os.path.join(self.output_dir, path)
        os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
        return path

    def read_dataset(self, path: str) -> CensoredSeries:
        """读取数据集 CSV

        列为 y, lower, upper, cens, x1..xq。空的 lower/upper 表示 -inf/+inf；
        观测行的空界用 y 填充。

        Args:
            path: 文件路径

        Returns:
            CensoredSeries
        """
        if not os.path.exists(path):
            raise DatasetError(f"数据文件不存在: {path}")
        try:
            frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
            raise DatasetError(f"无法解析数据文件 {path}: {e}") from e
        frame.columns = [c.strip() for c in frame.columns]
        missing = [c for c in DATASET_HEAD if c not in frame.columns]
        if missing:
            raise DatasetError(f"{path} 缺少列: {', '.join(missing)}")
        if frame.empty:
            raise DatasetError(f"{path} 没有数据行")
        x_names = _covariate_columns(list(frame.columns), path)

        y = _parse_column(frame, 'y', path)
        lower = _parse_column(frame, 'lower', path)
        upper = _parse_column(frame, 'upper', path)
        cens_raw = frame['cens'].str.strip()
        bad = ~cens_raw.isin(['0', '1'])
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0]) + 1
            raise DatasetError(f"{path} 第 {row} 行的 cens 必须为 0 或 1", row=row)
        cens = (cens_raw == '1').to_numpy()
        X = np.column_stack([_parse_column(frame, name, path, allow_empty=False) for name in x_names])

        for row in range(y.size):
            if cens[row]:
                lower[row] = -np.inf if np.isnan(lower[row]) else lower[row]
                upper[row] = np.inf if np.isnan(upper[row]) else upper[row]
                if not lower[row] < upper[row]:
                    raise DatasetError(f"{path} 第 {row + 1} 行的删失区间无效", row=row + 1)
                continue
            if np.isnan(y[row]):
                raise DatasetError(f"{path} 第 {row + 1} 行为观测值但 y 为空", row=row + 1)
            for bound in (lower, upper):
                if np.isnan(bound[row]):
                    bound[row] = y[row]
                elif bound[row] != y[row]:
                    raise DatasetError(f"{path} 第 {row + 1} 行为观测值，但区间界与 y 不一致", row=row + 1)
        try:
            return CensoredSeries(y=y, lower=lower, upper=upper, cens=cens, X=X)
        except DomainError as e:
            raise DatasetError(f"{path}: {e.message}", row=e.details.get('row')) from e

    def write_dataset(self, data: CensoredSeries, path: str) -> str:
        """写出数据集 CSV，无穷界与缺失值写为空单元格"""
        frame = pd.DataFrame({
            'y': data.y,
            'lower': np.where(np.isfinite(data.lower), data.lower, np.nan),
            'upper': np.where(np.isfinite(data.upper), data.upper, np.nan),
            'cens': data.cens.astype(int),
        })
        for j in range(data.q):
            frame[f"x{j + 1}"] = data.X[:, j]
        return self.write_table(frame, path)

    def read_covariates(self, path: str) -> np.ndarray:
        """读取只含 x1..xq 列的协变量 CSV"""
        if not os.path.exists(path):
            raise DatasetError(f"协变量文件不存在: {path}")
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
        frame.columns = [c.strip() for c in frame.columns]
        if frame.empty:
            raise DatasetError(f"{path} 没有协变量行")
        names = _covariate_columns(list(frame.columns), path)
        return np.column_stack([_parse_column(frame, name, path, allow_empty=False) for name in names])

    def write_table(self, frame: pd.DataFrame, path: str) -> str:
        """写出 CSV 表格，浮点数保留 17 位有效数字"""
        path = self.resolve(path)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep='', lineterminator='\n')
        return path

    def write_report(self, report: RunReport, path: str) -> str:
        """写出 JSON 报告"""
        path = self.resolve(path)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(report.model_dump(), f, indent=2, ensure_ascii=False, allow_nan=False)
            f.write('\n')
        return path

    def read_report(self, path: str) -> RunReport:
        """读取 JSON 报告"""
        if not os.path.exists(path):
            raise DatasetError(f"报告文件不存在: {path}")
        try:
            with open(path, 'r', encoding='utf-8') as f:
                return RunReport.model_validate(json.load(f))
        except (json.JSONDecodeError, ValueError) as e:
            raise DatasetError(f"报告文件格式错误 {path}: {e}") from e


file_storage = FileStorage()

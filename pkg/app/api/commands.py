"""命令行子命令的实现：fit、predict、residuals、simulate、mc-study"""
import json
import math
import os
import sys
import time
from typing import Any, Callable, Dict, List, Optional
import numpy as np
import pandas as pd
from pydantic import ValidationError
from app.core.config import config, load_yaml_config
from app.core.errors import CartError, DomainError
from app.core.logger import get_logger
from app.models.fit import FitResult, SaemConfig
from app.models.report import ImputedValue, ParameterEstimate, RunReport
from app.models.series import CensoredSeries, ModelSpec, Theta
from app.models.simulation import McDesign, McSummary
from app.services.forecast import ForecastRequest, forecast, quantile_residuals
from app.services.inference import confidence_interval
from app.services.saem import fit
from app.services.simulation import load_presets, mc_study, robustness_study, simulate_dataset
from app.storage.file import file_storage

logger = get_logger('commands')

# 退出码
EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


def run_command(command: Callable[..., int], **kwargs) -> int:
    """执行子命令，领域错误转换为退出码 1 并把错误响应写到 stderr"""
    try:
        return command(**kwargs)
    except ValidationError as e:
        error = DomainError(f"参数校验失败: {e.errors()[0].get('msg', str(e))}", {'errors': e.error_count()})
    except CartError as e:
        error = e
    logger.error(f"{command.__name__} 失败: {error.message}")
    print(error.to_response().model_dump_json(), file=sys.stderr)
    return EXIT_ERROR


def build_report(result: FitResult, data: CensoredSeries, saem_config: SaemConfig, level: float = 0.95,
                 dataset: Optional[str] = None, elapsed: Optional[float] = None) -> RunReport:
    """由拟合结果组装 RunReport"""
    theta = result.theta
    y_complete = result.complete_series(data.y)
    residuals = quantile_residuals(theta, y_complete, data.X)
    parameters = []
    for name, est, se, ok in zip(theta.parameter_names(), theta.as_vector(), result.std_errors, result.se_defined):
        row = ParameterEstimate(name=name, estimate=float(est))
        if ok:
            lo, hi = confidence_interval(float(est), float(se), level)
            row = ParameterEstimate(name=name, estimate=float(est), std_error=float(se), ci_lower=lo, ci_upper=hi)
        parameters.append(row)
    return RunReport(
        p=theta.p,
        q=theta.q,
        n=data.n,
        level=level,
        parameters=parameters,
        nu_se_fragile=result.nu_se_fragile,
        info_matrix=result.info_matrix.tolist(),
        imputed=[ImputedValue(index=int(i), value=float(v)) for i, v in zip(result.imputed_index, result.imputed)],
        y_complete=y_complete.tolist(),
        X=data.X.tolist(),
        u_hat=result.u_hat.tolist(),
        residuals=residuals.tolist(),
        theta_trace=result.theta_trace.tolist(),
        q_trace=result.q_trace.tolist(),
        iterations_run=result.iterations_run,
        converged=result.converged,
        loglik=result.loglik,
        aic=result.aic,
        bic=result.bic,
        config=saem_config.model_dump(mode='json'),
        seed=saem_config.seed,
        dataset=dataset,
        wall_clock_seconds=elapsed,
    )


def theta_from_report(report: RunReport) -> Theta:
    return Theta.from_vector(report.estimates, report.q, report.p)


def cmd_fit(dataset: str, p: int, out: str, m: Optional[int] = None, iters: Optional[int] = None,
            cutoff: Optional[float] = None, tol: Optional[float] = None, seed: Optional[int] = None,
            level: float = 0.95, record_timing: bool = False) -> int:
    """拟合数据集并写出 JSON 报告

    Returns:
        0 收敛；2 达到最大迭代次数仍未收敛（报告照常写出）
    """
    data = file_storage.read_dataset(dataset)
    spec = ModelSpec(p=p, q=data.q)
    saem_config = SaemConfig.from_settings(config.saem, M=m, W=iters, c=cutoff, tol=tol, seed=seed)
    started = time.perf_counter()
    result = fit(data, spec, saem_config)
    elapsed = time.perf_counter() - started if record_timing else None
    report = build_report(result, data, saem_config, level, dataset, elapsed)
    path = file_storage.write_report(report, out)
    logger.info(f"报告已写入 {path}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_predict(report: str, covariates: str, out: str, horizon: Optional[int] = None) -> int:
    """用报告中的参数与填补序列做递推预测"""
    run = file_storage.read_report(report)
    X_pred = file_storage.read_covariates(covariates)
    horizon = X_pred.shape[0] if horizon is None else horizon
    if horizon > X_pred.shape[0]:
        raise DomainError(f"预测步数 {horizon} 超过协变量行数 {X_pred.shape[0]}")
    request = ForecastRequest(horizon=horizon, X_pred=X_pred[:horizon])
    yhat = forecast(theta_from_report(run), run.y_complete, run.X, request)
    frame = pd.DataFrame({'time_offset': np.arange(1, horizon + 1), 'yhat': yhat})
    path = file_storage.write_table(frame, out)
    logger.info(f"预测结果已写入 {path}")
    return EXIT_OK


def cmd_residuals(report: str, dataset: str, out: str) -> int:
    """计算数据集上的分位数残差"""
    run = file_storage.read_report(report)
    data = file_storage.read_dataset(dataset)
    if (data.n, data.q) != (run.n, run.q):
        raise DomainError(f"数据集维度 (n={data.n}, q={data.q}) 与报告 (n={run.n}, q={run.q}) 不一致")
    y_complete = np.array(data.y, dtype=float)
    for item in run.imputed:
        y_complete[item.index] = item.value
    theta = theta_from_report(run)
    residuals = quantile_residuals(theta, y_complete, data.X, ModelSpec(p=run.p, q=run.q))
    frame = pd.DataFrame({'index': np.arange(run.p, data.n), 'residual': residuals})
    path = file_storage.write_table(frame, out)
    logger.info(f"残差已写入 {path}")
    return EXIT_OK


def _parse_lod(value: Any) -> Optional[float]:
    if value is None or str(value).strip().lower() in ('', 'none'):
        return None
    return float(value)


def resolve_design(preset: Optional[str] = None, replicates: Optional[int] = None, n: Optional[int] = None,
                   lod: Optional[str] = None, perturb: Optional[List[float]] = None, seed: Optional[int] = None,
                   beta: Optional[List[float]] = None, phi: Optional[List[float]] = None,
                   sigma2: Optional[float] = None, nu: Optional[float] = None,
                   missing_frac: Optional[float] = None) -> McDesign:
    """由预设与命令行参数组合研究设计，命令行参数优先"""
    values: Dict[str, Any] = {}
    if preset:
        presets = load_presets(load_yaml_config(config.storage.presets_file).get('presets', {}))
        if preset not in presets:
            raise DomainError(f"未知的预设: {preset}", {'available': sorted(presets)})
        values.update(presets[preset])
    theta = dict(values.get('theta_true', {}))
    for key, value in (('beta', beta), ('phi', phi), ('sigma2', sigma2), ('nu', nu)):
        if value is not None:
            theta[key] = value
    missing_keys = [k for k in ('beta', 'phi', 'sigma2', 'nu') if k not in theta]
    if missing_keys:
        raise DomainError(f"缺少真实参数: {', '.join(missing_keys)}（使用 --preset 或显式给出）")
    values['theta_true'] = Theta(**theta)
    if lod is not None:
        values['lod'] = _parse_lod(lod)
    overrides = {'replicates': replicates, 'n': n, 'perturbation': perturb, 'missing_frac': missing_frac}
    values.update({k: v for k, v in overrides.items() if v is not None})
    values.setdefault('replicates', 1)
    values.setdefault('missing_frac', config.simulation.missing_frac)
    values['seed'] = config.saem.seed if seed is None else seed
    values['burnin'] = config.simulation.burnin
    values['max_redraws'] = config.simulation.max_redraws
    if 'n' not in values:
        raise DomainError("缺少序列长度 --n")
    return McDesign(**values)


def cmd_simulate(out: str, **design_flags) -> int:
    """按设计生成一个数据集（副本 0）"""
    design = resolve_design(**design_flags)
    data = simulate_dataset(design)
    path = file_storage.write_dataset(data, out)
    summary = data.censoring_summary()
    logger.info(f"数据集已写入 {path}: 删失比例 {summary['censored_rate']:.3f}，缺失比例 {summary['missing_rate']:.3f}")
    return EXIT_OK


def _summary_frame(summaries: List[McSummary]) -> pd.DataFrame:
    rows = []
    for summary in summaries:
        for row in summary.parameters:
            entry = row.model_dump()
            if summary.vartheta is not None:
                entry['vartheta'] = summary.vartheta
            rows.append(entry)
    return pd.DataFrame(rows)


def _replicate_frame(summaries: List[McSummary], names: List[str]) -> pd.DataFrame:
    rows = []
    for summary in summaries:
        for record in summary.records:
            entry = record.model_dump(exclude={'estimates', 'std_errors'})
            estimates = record.estimates or [None] * len(names)
            std_errors = record.std_errors or [None] * len(names)
            for name, est, se in zip(names, estimates, std_errors):
                entry[f"est_{name}"] = est
                entry[f"se_{name}"] = se
            rows.append(entry)
    return pd.DataFrame(rows)


def _robustness_frame(summaries: List[McSummary]) -> pd.DataFrame:
    return pd.DataFrame([
        summary.model_dump(include={'vartheta', 'di_percent', 'nu_mean', 'sigma2_star_mean', 'replicates_ok',
                                    'failures', 'censored_rate', 'missing_rate', 'total_rate'})
        for summary in summaries
    ])


def cmd_mc_study(out: str, jobs: Optional[int] = None, m: Optional[int] = None, iters: Optional[int] = None,
                 cutoff: Optional[float] = None, tol: Optional[float] = None, **design_flags) -> int:
    """蒙特卡洛研究，写出 summary.csv 与 replicates.csv（扰动设计另写 robustness.csv）"""
    design = resolve_design(**design_flags)
    saem_config = SaemConfig.from_settings(config.saem, M=m, W=iters, c=cutoff, tol=tol)
    jobs = config.simulation.jobs if jobs is None else jobs
    if jobs == 0:
        raise DomainError("jobs 不能为 0")

    if design.perturbation and len(design.perturbation) > 1:
        summaries = robustness_study(design, saem_config, jobs)
    else:
        summaries = [mc_study(design, saem_config, jobs)]

    os.makedirs(out, exist_ok=True)
    names = design.theta_true.parameter_names()
    file_storage.write_table(_summary_frame(summaries), os.path.join(out, 'summary.csv'))
    file_storage.write_table(_replicate_frame(summaries, names), os.path.join(out, 'replicates.csv'))
    if design.perturbation:
        file_storage.write_table(_robustness_frame(summaries), os.path.join(out, 'robustness.csv'))
    with open(os.path.join(out, 'design.json'), 'w', encoding='utf-8') as f:
        json.dump({
            'design': design.model_dump(mode='json', exclude={'theta_true'}),
            'theta_true': [None if math.isinf(v) else v for v in design.theta_true.as_vector().tolist()],
            'config': saem_config.model_dump(mode='json'),
        }, f, indent=2, ensure_ascii=False)
        f.write('\n')
    logger.info(f"模拟研究结果已写入 {out}")
    return EXIT_OK

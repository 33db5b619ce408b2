"""模拟研究：数据生成、检测限删失、最大值扰动与蒙特卡洛汇总"""
import math
from typing import Any, Dict, List, Optional, Sequence, Tuple
import numpy as np
from joblib import Parallel, delayed
from scipy import signal
from app.core.errors import CartError, CensoringRejected, DomainError, SimulationError, StudyError
from app.core.logger import get_logger
from app.models.fit import FitResult, SaemConfig
from app.models.series import CensoredSeries, ModelSpec, Theta
from app.models.simulation import McDesign, McSummary, ParameterSummary, ReplicateRecord
from app.services.inference import confidence_interval
from app.services.saem import fit
from app.services.sampler import RngStream

logger = get_logger('simulation')

# 副本内子流编号
DATA_STREAM = 0
CENSOR_STREAM = 1
COVARIATE_STREAM = 2


def generate_covariates(n: int, q: int, rng: RngStream) -> np.ndarray:
    """第 0 列为截距，奇数列标准正态，偶数列 U(0,1)"""
    if n < 1 or q < 1:
        raise DomainError(f"n 与 q 必须为正整数: n={n}, q={q}")
    X = np.ones((n, q))
    gen = rng.generator
    for j in range(1, q):
        X[:, j] = gen.standard_normal(n) if j % 2 == 1 else gen.random(n)
    return X


def simulate_cart(theta: Theta, X, burnin: int, rng: RngStream) -> np.ndarray:
    """按 CARt(p) 模型生成序列

    新息取正态除以 Gamma 权重平方根的尺度混合形式；nu=inf 时为正态新息。

    Args:
        theta: 真实参数，phi 必须平稳
        X: n×q 协变量
        burnin: 丢弃的预热长度
        rng: 随机数流

    Returns:
        长度 n 的序列
    """
    if not theta.is_stationary:
        raise DomainError(f"phi 非平稳，无法生成数据: {theta.phi.tolist()}")
    if burnin < 0:
        raise DomainError(f"burnin 必须非负: {burnin}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    total = n + burnin
    gen = rng.generator
    eta = math.sqrt(theta.sigma2) * gen.standard_normal(total)
    if math.isfinite(theta.nu):
        eta /= np.sqrt(gen.gamma(0.5 * theta.nu, 2.0 / theta.nu, size=total))
    xi = signal.lfilter([1.0], np.concatenate([[1.0], -theta.phi]), eta)[burnin:]
    return X @ theta.beta + xi


def apply_censoring(y, lod: Optional[float], missing_frac: float, rng: RngStream, X, p: int) -> CensoredSeries:
    """检测限左删失，并将部分删失观测转为缺失

    Args:
        y: 完整序列
        lod: 检测限，y <= lod 的观测被删失；None 或 -inf 表示不删失
        missing_frac: 删失观测中转为缺失的比例
        rng: 随机数流
        X: 协变量
        p: 自回归阶数，前 p 个观测不能被删失

    Returns:
        CensoredSeries
    """
    if not 0.0 <= missing_frac <= 1.0:
        raise DomainError(f"missing_frac 必须位于 [0, 1]: {missing_frac}")
    y = np.asarray(y, dtype=float)
    n = y.size
    cens = np.zeros(n, dtype=bool) if lod is None else y <= lod
    if np.any(cens[:p]):
        raise CensoringRejected(f"前 p={p} 个观测中有值低于检测限 {lod}")

    lower = y.copy()
    upper = y.copy()
    y_obs = y.copy()
    censored = np.flatnonzero(cens)
    if censored.size:
        lower[censored] = -np.inf
        upper[censored] = lod
        y_obs[censored] = lod
        count = int(math.floor(missing_frac * censored.size + 0.5))
        if count:
            missing = np.sort(rng.generator.choice(censored, size=count, replace=False))
            upper[missing] = np.inf
            y_obs[missing] = np.nan
    return CensoredSeries(y=y_obs, lower=lower, upper=upper, cens=cens, X=X)


def perturb_max(y, vartheta: float) -> np.ndarray:
    """最大值（首次出现处）加上 vartheta 倍样本标准差"""
    if vartheta < 0:
        raise DomainError(f"vartheta 必须非负: {vartheta}")
    y = np.array(y, dtype=float)
    if vartheta == 0:
        return y
    y[int(np.argmax(y))] += vartheta * np.std(y, ddof=1)
    return y


def detect_influential(fit_result: FitResult) -> int:
    """估计权重 u_hat 最小的观测位置（0 起始的序列下标）"""
    return int(fit_result.theta.p + np.argmin(fit_result.u_hat))


def innovation_variance(theta: Theta) -> Optional[float]:
    """nu sigma2 / (nu - 2)，nu <= 2 时无定义"""
    if theta.nu <= 2:
        return None
    if math.isinf(theta.nu):
        return theta.sigma2
    return theta.nu * theta.sigma2 / (theta.nu - 2.0)


def _draw_series(design: McDesign, stream: RngStream) -> Tuple[np.ndarray, np.ndarray]:
    """生成协变量与序列，前 p 个观测低于检测限时重抽"""
    theta = design.theta_true
    p = theta.p
    X = generate_covariates(design.n, theta.q, stream.child(COVARIATE_STREAM))
    data_rng = stream.child(DATA_STREAM)
    for _ in range(design.max_redraws):
        y = simulate_cart(theta, X, design.burnin, data_rng)
        if design.lod is None or not np.any(y[:p] <= design.lod):
            return X, y
    raise SimulationError(f"重抽 {design.max_redraws} 次后前 p 个观测仍被删失",
                          {'max_redraws': design.max_redraws})


def simulate_dataset(design: McDesign, replicate: int = 0) -> CensoredSeries:
    """按设计生成单个删失数据集，与 mc_study 中同编号副本的数据一致"""
    stream = RngStream(design.seed, replicate)
    X, y = _draw_series(design, stream)
    if design.perturbation:
        y = perturb_max(y, design.perturbation[0])
    return apply_censoring(y, design.lod, design.missing_frac, stream.child(CENSOR_STREAM), X, design.theta_true.p)


def run_replicate(design: McDesign, config: SaemConfig, replicate: int,
                  varthetas: Sequence[Optional[float]]) -> List[ReplicateRecord]:
    """单个副本：生成 -> （扰动） -> 删失 -> 拟合

    同一副本的基础序列被每个 vartheta 共用。

    Args:
        design: 研究设计
        config: SAEM 参数，seed 与 stream_id 由设计与副本编号覆盖
        replicate: 副本编号
        varthetas: 扰动倍数列表，None 表示不扰动

    Returns:
        每个 vartheta 一条记录
    """
    stream = RngStream(design.seed, replicate)
    theta = design.theta_true
    spec = ModelSpec(p=theta.p, q=theta.q)
    fit_config = config.model_copy(update={'seed': design.seed, 'stream_id': replicate})
    records = []
    try:
        X, y_clean = _draw_series(design, stream)
    except CartError as e:
        logger.warning(f"副本 {replicate} 数据生成失败: {e.message}")
        return [ReplicateRecord(replicate=replicate, vartheta=v, error=e.message) for v in varthetas]

    for vartheta in varthetas:
        record = ReplicateRecord(replicate=replicate, vartheta=vartheta)
        try:
            y = y_clean if vartheta is None else perturb_max(y_clean, vartheta)
            data = apply_censoring(y, design.lod, design.missing_frac, stream.child(CENSOR_STREAM), X, theta.p)
            result = fit(data, spec, fit_config)
            rates = data.censoring_summary()
            record = ReplicateRecord(
                replicate=replicate,
                vartheta=vartheta,
                estimates=result.theta.as_vector().tolist(),
                std_errors=[float(s) if ok else None for s, ok in zip(result.std_errors, result.se_defined)],
                converged=result.converged,
                iterations=result.iterations_run,
                censored_rate=rates['censored_rate'],
                missing_rate=rates['missing_rate'],
                perturbed_index=None if vartheta is None else int(np.argmax(y_clean)),
                influential_index=detect_influential(result),
            )
        except CartError as e:
            logger.warning(f"副本 {replicate} (vartheta={vartheta}) 拟合失败: {e.message}")
            record.error = e.message
        records.append(record)
    return records


def summarize(records: Sequence[ReplicateRecord], theta_true: Theta, vartheta: Optional[float] = None,
              level: float = 0.95) -> McSummary:
    """汇总 MC-Mean、MC-SD、IM-SE、CP 与 MSE

    Args:
        records: 副本记录
        theta_true: 真实参数
        vartheta: 扰动倍数
        level: 置信水平

    Returns:
        McSummary
    """
    ok = [r for r in records if not r.failed]
    failures = len(records) - len(ok)
    if not ok:
        raise StudyError(f"全部 {len(records)} 个副本均失败", {'failures': failures})

    names = theta_true.parameter_names()
    truth = theta_true.as_vector()
    est = np.array([r.estimates for r in ok], dtype=float)
    se = np.array([[np.nan if s is None else s for s in r.std_errors] for r in ok], dtype=float)
    R = est.shape[0]

    rows = []
    for j, name in enumerate(names):
        column = est[:, j]
        se_column = se[:, j]
        defined = np.isfinite(se_column)
        finite_truth = bool(np.isfinite(truth[j]))
        cp = None
        if j < theta_true.q and finite_truth and np.any(defined):
            intervals = [confidence_interval(e, s, level) for e, s in zip(column[defined], se_column[defined])]
            cp = float(np.mean([lo <= truth[j] <= hi for lo, hi in intervals]))
        rows.append(ParameterSummary(
            parameter=name,
            truth=float(truth[j]),
            mc_mean=float(np.mean(column)),
            mc_sd=float(np.std(column, ddof=1)) if R > 1 else None,
            im_se=float(np.mean(se_column[defined])) if np.any(defined) else None,
            cp=cp,
            mse=float(np.mean((column - truth[j]) ** 2)) if finite_truth else None,
        ))

    censored = float(np.mean([r.censored_rate for r in ok]))
    missing = float(np.mean([r.missing_rate for r in ok]))
    di_percent = None
    if vartheta is not None:
        di_percent = 100.0 * float(np.mean([r.influential_index == r.perturbed_index for r in ok]))
    q, p = theta_true.q, theta_true.p
    star = [innovation_variance(Theta(beta=est[i, :q], phi=est[i, q:q + p], sigma2=est[i, q + p], nu=est[i, q + p + 1]))
            for i in range(R)]
    star = [s for s in star if s is not None]
    return McSummary(
        parameters=rows,
        replicates_ok=R,
        failures=failures,
        censored_rate=censored,
        missing_rate=missing,
        total_rate=censored + missing,
        vartheta=vartheta,
        di_percent=di_percent,
        nu_mean=float(np.mean(est[:, -1])),
        sigma2_star_mean=float(np.mean(star)) if star else None,
        records=list(records),
    )


def _run_all(design: McDesign, config: SaemConfig, varthetas: Sequence[Optional[float]],
             jobs: int) -> List[List[ReplicateRecord]]:
    logger.info(f"开始模拟研究: 副本数={design.replicates}, n={design.n}, lod={design.lod}, "
                f"vartheta={list(varthetas)}, jobs={jobs}")
    # 按副本编号返回，汇总与并行宽度无关
    return Parallel(n_jobs=jobs)(
        delayed(run_replicate)(design, config, r, varthetas) for r in range(design.replicates)
    )


def mc_study(design: McDesign, config: SaemConfig, jobs: int = 1) -> McSummary:
    """蒙特卡洛研究：生成 -> 删失 -> 拟合 -> 汇总

    设计中给出扰动时只使用第一个 vartheta，多个 vartheta 请用 robustness_study。

    Args:
        design: 研究设计
        config: SAEM 参数
        jobs: 并行副本数

    Returns:
        McSummary
    """
    vartheta = design.perturbation[0] if design.perturbation else None
    results = _run_all(design, config, [vartheta], jobs)
    summary = summarize([records[0] for records in results], design.theta_true, vartheta)
    logger.info(f"模拟研究完成: 成功 {summary.replicates_ok}，失败 {summary.failures}")
    return summary


def robustness_study(design: McDesign, config: SaemConfig, jobs: int = 1) -> List[McSummary]:
    """对每个 vartheta 扰动同一批基础副本并分别汇总"""
    varthetas = list(design.perturbation or [0.0])
    results = _run_all(design, config, varthetas, jobs)
    summaries = []
    for j, vartheta in enumerate(varthetas):
        summary = summarize([records[j] for records in results], design.theta_true, vartheta)
        logger.info(f"vartheta={vartheta}: DI={summary.di_percent:.2f}%, nu 均值={summary.nu_mean:.3f}")
        summaries.append(summary)
    return summaries


def load_presets(presets: Dict[str, Any]) -> Dict[str, Dict[str, Any]]:
    """展开 YAML 中的预设族为 {名称: McDesign 参数}

    名称形如 sim1-n300-lod1.60、sim1-full-n300-lodnone 与 sim2-perturb。
    """
    expanded: Dict[str, Dict[str, Any]] = {}
    for family, family_cfg in (presets or {}).items():
        theta = family_cfg['theta']
        nu = theta.get('nu')
        base = {
            'theta_true': {
                'beta': theta['beta'], 'phi': theta['phi'], 'sigma2': theta['sigma2'],
                'nu': math.inf if nu is None or str(nu).lower() in ('inf', '.inf') else float(nu),
            },
            'missing_frac': family_cfg.get('missing_frac', 0.20),
        }
        if 'perturbation' in family_cfg:
            for n in family_cfg['n']:
                expanded[f"{family}-perturb" if len(family_cfg['n']) == 1 else f"{family}-perturb-n{n}"] = {
                    **base, 'n': n, 'replicates': family_cfg['replicates'], 'lod': None,
                    'perturbation': list(family_cfg['perturbation']),
                }
            continue
        for n in family_cfg['n']:
            for lod in family_cfg['lod']:
                tag = 'none' if lod is None else f"{float(lod):.2f}"
                expanded[f"{family}-n{n}-lod{tag}"] = {**base, 'n': n, 'lod': lod, 'replicates': family_cfg['replicates']}
                if 'full_replicates' in family_cfg:
                    expanded[f"{family}-full-n{n}-lod{tag}"] = {
                        **base, 'n': n, 'lod': lod, 'replicates': family_cfg['full_replicates'],
                    }
    return expanded

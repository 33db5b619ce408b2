import argparse
import sys
from typing import List, Optional
from app.api.commands import cmd_fit, cmd_mc_study, cmd_predict, cmd_residuals, cmd_simulate, run_command
from app.core.logger import log_manager


def _float_list(value: str) -> List[float]:
    try:
        return [float(item) for item in value.split(',') if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"需要逗号分隔的数值列表: {value}")


def _add_design_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--preset', help='config/presets.yaml 中的预设名，如 sim1-n300-lod1.60')
    parser.add_argument('--replicates', type=int, help='副本数')
    parser.add_argument('--n', type=int, help='序列长度')
    parser.add_argument('--lod', help='检测限，none 表示不删失')
    parser.add_argument('--perturb', type=_float_list, help='最大值扰动倍数列表，如 0,1,2,3')
    parser.add_argument('--missing-frac', type=float, dest='missing_frac', help='删失观测中转为缺失的比例')
    parser.add_argument('--beta', type=_float_list, help='真实 beta')
    parser.add_argument('--phi', type=_float_list, help='真实 phi')
    parser.add_argument('--sigma2', type=float, help='真实 sigma2')
    parser.add_argument('--nu', type=float, help='真实 nu，inf 表示正态新息')
    parser.add_argument('--seed', type=int, help='随机数种子（默认取 CARTP_SEED 或配置文件）')


def _add_saem_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--m', type=int, help='每次迭代的蒙特卡洛样本数 M')
    parser.add_argument('--iters', type=int, help='最大迭代次数 W')
    parser.add_argument('--cutoff', type=float, help='无记忆阶段比例 c')
    parser.add_argument('--tol', type=float, help='参数相对变化容差')


def build_parser() -> argparse.ArgumentParser:
    """构造命令行解析器"""
    parser = argparse.ArgumentParser(prog='cartp', description='删失自回归 Student-t 回归模型的 SAEM 估计')
    parser.add_argument('--log-level', dest='log_level', help='日志级别 (DEBUG, INFO, WARNING, ERROR)')
    commands = parser.add_subparsers(dest='command', required=True)

    fit_parser = commands.add_parser('fit', help='拟合数据集并写出 JSON 报告')
    fit_parser.add_argument('dataset', help='数据集 CSV')
    fit_parser.add_argument('--p', type=int, required=True, help='自回归阶数')
    _add_saem_flags(fit_parser)
    fit_parser.add_argument('--seed', type=int, help='随机数种子（默认取 CARTP_SEED 或配置文件）')
    fit_parser.add_argument('--level', type=float, default=0.95, help='置信水平')
    fit_parser.add_argument('--out', default='report.json', help='报告路径')
    fit_parser.add_argument('--record-timing', action='store_true', dest='record_timing',
                            help='在报告中记录耗时（输出不再逐字节可复现）')

    predict_parser = commands.add_parser('predict', help='递推预测')
    predict_parser.add_argument('report', help='fit 输出的报告')
    predict_parser.add_argument('covariates', help='未来协变量 CSV（列 x1..xq）')
    predict_parser.add_argument('--horizon', type=int, help='预测步数，默认为协变量行数')
    predict_parser.add_argument('--out', default='predictions.csv', help='输出 CSV')

    residuals_parser = commands.add_parser('residuals', help='分位数残差')
    residuals_parser.add_argument('report', help='fit 输出的报告')
    residuals_parser.add_argument('dataset', help='数据集 CSV')
    residuals_parser.add_argument('--out', default='residuals.csv', help='输出 CSV')

    simulate_parser = commands.add_parser('simulate', help='按设计生成一个数据集')
    _add_design_flags(simulate_parser)
    simulate_parser.add_argument('--out', default='simulated.csv', help='输出 CSV')

    study_parser = commands.add_parser('mc-study', help='蒙特卡洛研究')
    _add_design_flags(study_parser)
    _add_saem_flags(study_parser)
    study_parser.add_argument('--jobs', type=int, help='并行副本数')
    study_parser.add_argument('--out', default='output/study', help='输出目录')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """应用主入口"""
    try:
        args = vars(build_parser().parse_args(argv))
    except SystemExit as e:
        # argparse 的用法错误退出码 2 与未收敛冲突，统一为 1
        return 0 if e.code in (0, None) else 1
    command = args.pop('command')
    log_level = args.pop('log_level')
    if log_level:
        log_manager.set_level(log_level)

    handlers = {
        'fit': cmd_fit,
        'predict': cmd_predict,
        'residuals': cmd_residuals,
        'simulate': cmd_simulate,
        'mc-study': cmd_mc_study,
    }
    return run_command(handlers[command], **args)


if __name__ == "__main__":
    sys.exit(main())

"""BalCol 命令行入口

  python column.py run --config exp.txt --set n_steps=100 --out ledger.csv
  python column.py bubble-column --integrator cn --tolerance 1e-12
  python column.py list
  python column.py config-template > config.txt

退出码：0 成功，2 配置/参数错误，3 不收敛或线性求解失败，4 非物理状态，5 I/O 错误，1 其他异常。
"""

import argparse
import logging
import sys
from typing import Dict, List, Optional

from core import __version__, get_config_manager
from core.config import EXPERIMENTS, load_experiment_config
from core.config_manager import parse_override
from core.errors import BalColError, exit_code_for
from core.experiment_manager import experiment_manager
from core.logger_manager import logger_manager
from core.monitor import monitor_manager

logger = logger_manager.get_logger('BalCol')

INTEGRATOR_ALIASES = {"balanced": "balanced", "cn": "crank-nicolson", "crank-nicolson": "crank-nicolson"}


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value 配置文件")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="覆盖单个配置项，可重复")
    parser.add_argument("--out", help="输出 CSV 路径（多账本实验以它为前缀）")
    parser.add_argument("--integrator", choices=sorted(INTEGRATOR_ALIASES), help="垂直隐式积分器")
    parser.add_argument("--tolerance", type=float, help="Newton 收敛容差")
    parser.add_argument("--exclude-w-from-convergence", action="store_true",
                        help="收敛判据中不计垂直速度")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="column.py", description="能量平衡垂直隐式积分器实验")
    parser.add_argument("--version", action="version", version=f"BalCol {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    _add_run_options(subparsers.add_parser("run", help="按配置文件中的 experiment 运行"))
    for name in EXPERIMENTS:
        _add_run_options(subparsers.add_parser(name, help=f"运行预设 {name}"))
    subparsers.add_parser("list", help="列出已注册的实验预设")
    subparsers.add_parser("config-template", help="打印带默认值的配置模板")
    return parser


def collect_overrides(args: argparse.Namespace) -> Dict[str, str]:
    """命令行选项 → 配置覆盖项；专用选项优先于 --set"""
    overrides: Dict[str, str] = {}
    for expr in args.overrides:
        overrides.update(parse_override(expr))
    if args.command != "run":
        overrides["experiment"] = args.command
    if args.out:
        overrides["output"] = args.out
    if args.integrator:
        overrides["integrator"] = INTEGRATOR_ALIASES[args.integrator]
    if args.tolerance is not None:
        overrides["tolerance"] = repr(args.tolerance)
    if args.exclude_w_from_convergence:
        overrides["include_w_in_criteria"] = "false"
    if overrides.get("integrator") == "cn":
        overrides["integrator"] = "crank-nicolson"
    return overrides


def resolve_config(args: argparse.Namespace):
    """两遍加载：先确定 experiment，再叠加该预设的默认值"""
    overrides = collect_overrides(args)
    experiment = overrides.get("experiment")
    if experiment is None:
        experiment = load_experiment_config(args.config, overrides).experiment
    return load_experiment_config(args.config, overrides, experiment_manager.defaults_for(experiment))


def _list_experiments() -> int:
    for entry in experiment_manager.describe():
        defaults = ", ".join(f"{k}={v}" for k, v in entry["defaults"].items()) or "无"
        print(f"{entry['name']:<20} v{entry['version']}  {entry['description']}  [预设: {defaults}]")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logger_manager.setup("INFO", file_logging=False)

    if args.command == "list":
        return _list_experiments()
    if args.command == "config-template":
        print(get_config_manager().render_template())
        return 0

    try:
        config = resolve_config(args)
        logger_manager.setup(config.log_level, config.structured_logs, config.log_dir)
        monitor_manager.reset()
        logger.info(f"\n====== BalCol v{__version__} | 实验 {config.experiment} ======")
        logger.info(f"📌 {config.n_levels} 层 | z_top={config.z_top} m | Δt={config.dt} s | {config.n_steps} 步 | "
                    f"积分器 {config.integrator} | 容差 {config.tolerance:g}")
        result = experiment_manager.run(config)
        for path in result.outputs:
            logger.info(f"💾 输出: {path}")
        monitor_manager.log_summary()
        logger.info("✅ 实验完成")
        return 0
    except BalColError as e:
        logger_manager.log_with_context(logger, logging.ERROR, f"❌ 实验失败: {e}", e.to_dict())
        monitor_manager.log_summary()
        return e.exit_code
    except KeyboardInterrupt:
        logger.warning("⚠️ 用户中断")
        return 1
    except Exception as e:
        logger_manager.log_with_context(logger, logging.CRITICAL, f"❌ 未处理的异常: {str(e)}",
                                        {"type": type(e).__name__}, exc_info=True)
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())

"""
主程序，解析命令行并分派实验命令
"""
import argparse
import sys
from typing import List, Optional

from src.exceptions import ConfigError, DataError, InfluenceAttackError, NumericalError
from src.models.experiment import load_experiment_config
from src.services.experiment_service import ExperimentService, cmd_report
from src.utils.logger import setup_logger

COMMANDS = {
    'train': ExperimentService.cmd_train,
    'influence': ExperimentService.cmd_influence,
    'attack-target': ExperimentService.cmd_attack_target,
    'attack-multi': ExperimentService.cmd_attack_multi,
    'attack-scale': ExperimentService.cmd_attack_scale,
    'fairness': ExperimentService.cmd_fairness,
}

_CATEGORIES = (
    (ConfigError, "配置错误"),
    (DataError, "数据错误"),
    (NumericalError, "数值错误"),
)


def build_parser() -> argparse.ArgumentParser:
    """构造命令行解析器"""
    parser = argparse.ArgumentParser(description="广义线性模型影响函数操纵工具")
    sub = parser.add_subparsers(dest='command', required=True)
    for name in COMMANDS:
        command = sub.add_parser(name)
        command.add_argument('--config', required=True, help="实验配置 YAML")
        command.add_argument('--out', default=None, help="输出目录，覆盖配置中的 out_dir")
        command.add_argument('--seed', type=int, default=None, help="随机种子，覆盖配置")
        command.add_argument('--threads', type=int, default=1, help="扫描并行数")
    report = sub.add_parser('report')
    report.add_argument('reports', nargs='+', help="待聚合的报告文件")
    report.add_argument('--out', default='.', help="CSV 输出目录")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    主函数

    Args:
        argv: 命令行参数，为空时读取 sys.argv

    Returns:
        int: 退出码（0 成功，2 配置错误，3 数据错误，4 数值错误，1 其他）
    """
    args = build_parser().parse_args(argv)
    logger = setup_logger()
    logger.info(f"执行命令: {args.command}")
    try:
        if args.command == 'report':
            cmd_report(args.reports, args.out)
        else:
            cfg = load_experiment_config(args.config).with_overrides(seed=args.seed, out_dir=args.out)
            COMMANDS[args.command](ExperimentService(cfg, threads=args.threads))
        logger.info(f"命令 {args.command} 完成")
        return 0
    except InfluenceAttackError as e:
        category = next((label for cls, label in _CATEGORIES if isinstance(e, cls)), "运行错误")
        logger.error(f"{category}: {str(e)}")
        return e.exit_code
    except Exception as e:
        logger.error(f"程序异常: {str(e)}", exc_info=True)
        return 1


if __name__ == '__main__':
    sys.exit(main())

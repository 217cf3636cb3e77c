"""
主程序：鲁棒自动出价实验命令行
  run       按 YAML 配置执行 ε 网格扫描
  verify    运行交叉校验套件
  gen-data  按预设生成数据集 CSV
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from rich.console import Console

from config import Config
from src.core.errors import AutobidError
from src.dashboard.display import SweepDisplay, create_verify_table, verify_frame
from src.experiments.config_loader import load_config
from src.experiments.sweep import run_sweep
from src.experiments.verify import SUITES, verify
from src.market.datasets import load_dataset, save_csv

# 配置日志
logging.basicConfig(
    level=getattr(logging, Config.LOG_LEVEL),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).resolve().parent / "configs"
PRESETS = {
    "synthetic": "synthetic.yaml",
    "synthetic-ctr-only": "synthetic_ctr_only.yaml",
    "ipinyou-like": "ipinyou_like.yaml",
    "bat-like": "bat_like.yaml",
}

EXIT_OK = 0
EXIT_FAILED_CHECKS = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="autobid", description="鲁棒自动出价模拟与校验")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="执行 ε 网格扫描")
    run.add_argument("--config", required=True, help="YAML 实验配置路径")
    run.add_argument("--out-dir", default="results", help="结果输出目录")
    run.add_argument("--jobs", type=int, default=Config.DEFAULT_JOBS, help="并行进程数")

    ver = sub.add_parser("verify", help="运行交叉校验套件")
    ver.add_argument("--suite", required=True, help=f"套件名称: {', '.join(SUITES)}")
    ver.add_argument("--instances", type=int, default=None, help="实例数，默认使用套件预设")
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--format", choices=("table", "csv"), default="table")

    gen = sub.add_parser("gen-data", help="按预设生成数据集 CSV")
    gen.add_argument("--preset", required=True, help=f"预设名称: {', '.join(PRESETS)}")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="输出 CSV 路径")
    return parser


def cmd_run(args: argparse.Namespace, console: Console) -> int:
    display = SweepDisplay(console)
    config = load_config(args.config)
    with display.progress() as progress:
        task = progress.add_task(f"扫描 {config.name}", total=config.n_cells)
        outputs = run_sweep(
            args.config, out_dir=args.out_dir, jobs=max(1, args.jobs),
            on_done=lambda _: progress.advance(task),
        )
    display.show_sweep(outputs.results, csv_path=str(outputs.csv_path))
    return EXIT_OK


def cmd_verify(args: argparse.Namespace, console: Console) -> int:
    if args.suite not in SUITES:
        console.print(f"[bold red]❌ 未知校验套件: {args.suite}（可选: {', '.join(SUITES)}）[/bold red]")
        return EXIT_USAGE
    report = verify(args.suite, n_instances=args.instances, seed=args.seed)
    if args.format == "csv":
        sys.stdout.write(verify_frame(report).to_csv(index=False))
    else:
        console.print(create_verify_table(report))
    return EXIT_OK if report.passed else EXIT_FAILED_CHECKS


def cmd_gen_data(args: argparse.Namespace, console: Console) -> int:
    if args.preset not in PRESETS:
        console.print(f"[bold red]❌ 未知预设: {args.preset}（可选: {', '.join(PRESETS)}）[/bold red]")
        return EXIT_USAGE
    config = load_config(CONFIG_DIR / PRESETS[args.preset])
    rounds = load_dataset(config.dataset, args.seed)
    path = save_csv(rounds[:config.horizon], args.out)
    console.print(f"[green]✅ 已生成 {len(rounds[:config.horizon])} 轮数据: {path}[/green]")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "verify": cmd_verify, "gen-data": cmd_gen_data}


def main(argv: Optional[List[str]] = None) -> int:
    """主函数，返回进程退出码"""
    args = build_parser().parse_args(argv)
    console = Console()
    try:
        return COMMANDS[args.command](args, console)
    except AutobidError as e:
        logger.error(f"{args.command} 失败: {e}")
        console.print(f"[bold red]❌ {e}[/bold red]")
        return EXIT_USAGE
    except KeyboardInterrupt:
        console.print("\n[yellow]⚠️  用户中断[/yellow]")
        return 130


if __name__ == "__main__":
    sys.exit(main())

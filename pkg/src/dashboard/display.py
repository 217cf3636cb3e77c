"""
终端展示：扫描汇总表、校验报告与进度条
"""
import math
from typing import Optional, Sequence

import pandas as pd
from rich.console import Console
from rich.panel import Panel
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn
from rich.table import Table
from rich.text import Text

from src.core.types import SweepResult
from src.experiments.verify import VerifyReport
from src.metrics.metrics import aggregate


def _fmt(value: Optional[float], digits: int = 6) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    return f"{value:.{digits}g}"


class SweepDisplay:
    """扫描过程与结果的终端展示"""

    def __init__(self, console: Optional[Console] = None):
        self.console = console or Console()

    def progress(self) -> Progress:
        """单元完成进度，由调用方在 with 块中推进"""
        return Progress(
            TextColumn("[bold blue]{task.description}"),
            BarColumn(),
            MofNCompleteColumn(),
            TimeElapsedColumn(),
            console=self.console,
        )

    def create_summary_table(self, results: Sequence[SweepResult], title: str = "扫描汇总") -> Table:
        """按 (policy, ε_a, ε_b) 汇总：各种子 TCV 与 CPC 的均值和样本标准差"""
        summary = aggregate(results)
        table = Table(title=title, show_header=True, header_style="bold magenta")
        table.add_column("策略", style="cyan")
        table.add_column("ε_a", justify="right")
        table.add_column("ε_b", justify="right")
        table.add_column("TCV 均值", justify="right")
        table.add_column("TCV 标准差", justify="right")
        table.add_column("CPC 均值", justify="right")
        table.add_column("种子数", justify="right")
        table.add_column("标记", justify="right")

        for row in summary.itertuples(index=False):
            std = "-" if row.single_seed else _fmt(row.std_tcv)
            table.add_row(
                row.policy,
                f"{row.eps_a:g}",
                f"{row.eps_b:g}",
                _fmt(row.mean_tcv),
                std,
                _fmt(row.mean_cpc),
                str(row.n_seeds),
                str(row.n_flagged),
                style="yellow" if row.n_flagged else None,
            )
        return table

    def create_best_table(self, results: Sequence[SweepResult]) -> Table:
        """每个策略 TCV 均值最高的 ε 组合"""
        summary = aggregate(results)
        table = Table(title="各策略最佳单元", show_header=True, header_style="bold green")
        table.add_column("策略", style="cyan")
        table.add_column("ε_a", justify="right")
        table.add_column("ε_b", justify="right")
        table.add_column("TCV 均值", justify="right")
        if summary.empty:
            return table
        best = summary.loc[summary.groupby("policy")["mean_tcv"].idxmax()]
        for row in best.itertuples(index=False):
            table.add_row(row.policy, f"{row.eps_a:g}", f"{row.eps_b:g}", _fmt(row.mean_tcv))
        return table

    def show_sweep(self, results: Sequence[SweepResult], csv_path: Optional[str] = None) -> None:
        self.console.print(self.create_summary_table(results))
        self.console.print(self.create_best_table(results))
        if csv_path:
            self.console.print(Panel(Text(f"结果文件: {csv_path}", style="cyan"), border_style="blue"))


def create_verify_table(report: VerifyReport) -> Table:
    table = Table(title=f"校验套件: {report.suite}", show_header=True, header_style="bold magenta")
    table.add_column("检查项", style="cyan")
    table.add_column("结果", justify="center")
    table.add_column("失败/总数", justify="right")
    table.add_column("说明")
    for check in report.checks:
        status = Text("✅ 通过", style="bold green") if check.passed else Text("❌ 失败", style="bold red")
        table.add_row(check.name, status, f"{check.failures}/{check.n}", check.detail)
    return table


def verify_frame(report: VerifyReport) -> pd.DataFrame:
    """校验报告的表格形式，供 --format csv 输出"""
    return pd.DataFrame(
        [
            {
                "suite": report.suite,
                "check": c.name,
                "passed": c.passed,
                "failures": c.failures,
                "n": c.n,
                "detail": c.detail,
            }
            for c in report.checks
        ],
        columns=["suite", "check", "passed", "failures", "n", "detail"],
    )

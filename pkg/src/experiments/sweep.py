"""
ε 网格扫描：策略 × ε_a × ε_b × 种子 的笛卡尔积，并行执行，统一写出结果
"""
import asyncio
import logging
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Union

from config import Config
from src.core.types import Policy, SweepResult
from src.experiments.config_loader import SweepConfig, load_config
from src.market.datasets import load_dataset
from src.market.simulator import SimulationConfig, run_simulation
from src.metrics.metrics import write_results_csv, write_summary_json

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SweepCell:
    """扫描网格中的一个单元"""
    policy: Policy
    eps_a: float
    eps_b: float
    seed: int


@dataclass
class SweepOutputs:
    """扫描产出"""
    csv_path: Path
    json_path: Path
    results: List[SweepResult]


def build_id() -> str:
    """git describe 风格的构建标识，不在仓库中时回退为版本号"""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True, text=True, timeout=5, cwd=Path(__file__).resolve().parent,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{Config.VERSION}"


def expand_cells(config: SweepConfig) -> List[SweepCell]:
    return [
        SweepCell(policy, eps_a, eps_b, seed)
        for policy in config.policies
        for eps_a in config.eps_a_grid
        for eps_b in config.eps_b_grid
        for seed in config.seeds
    ]


def run_cell(config: SweepConfig, cell: SweepCell, build: str = "") -> SweepResult:
    """单个单元：同一种子下生成数据集，所有广告主运行同一策略"""
    rounds = load_dataset(config.dataset, cell.seed)
    first = rounds[0]
    campaigns = config.campaigns(
        cell.policy, cell.eps_a, cell.eps_b, first.n_advertisers,
        budgets=first.budgets, caps=first.cpc_caps,
    )
    sim_config = SimulationConfig(
        horizon=config.horizon,
        campaigns=campaigns,
        eps_a=cell.eps_a,
        eps_b=cell.eps_b,
        seed=cell.seed,
        warmup_rounds=config.warmup_rounds,
        warmup_fraction=config.warmup_fraction,
        inject_noise=config.inject_noise,
        outcome_mode=config.outcome_mode,
        multi_starts=config.multi_starts,
        max_alternations=config.max_alternations,
        active_rule=config.active_rule,
        risk_window=config.risk_window,
    )
    run = run_simulation(sim_config, rounds, dataset_name=config.dataset.kind.value, build=build)
    return run.results[0]


async def _run_cells_async(
    config: SweepConfig,
    cells: List[SweepCell],
    jobs: int,
    build: str,
    on_done: Optional[Callable[[SweepResult], None]] = None,
) -> List[SweepResult]:
    """进程池并行执行各单元，结果由单一协程收集"""
    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [loop.run_in_executor(pool, run_cell, config, cell, build) for cell in cells]
        results = []
        for future in asyncio.as_completed(futures):
            result = await future
            results.append(result)
            if on_done:
                on_done(result)
    return results


def run_cells(
    config: SweepConfig,
    jobs: int = 1,
    build: Optional[str] = None,
    on_done: Optional[Callable[[SweepResult], None]] = None,
) -> List[SweepResult]:
    """执行全部单元并按 (policy, eps_a, eps_b, seed) 排序"""
    build = build_id() if build is None else build
    cells = expand_cells(config)
    logger.info(f"开始扫描 {config.name}: {len(cells)} 个单元，并行度 {jobs}")
    if jobs <= 1:
        results = []
        for cell in cells:
            result = run_cell(config, cell, build)
            results.append(result)
            if on_done:
                on_done(result)
    else:
        results = asyncio.run(_run_cells_async(config, cells, jobs, build, on_done))
    results.sort(key=lambda r: r.sort_key)
    n_flagged = sum(r.flagged for r in results)
    if n_flagged:
        logger.warning(f"{n_flagged}/{len(results)} 个单元带有标记，详见 flags 列")
    return results


def run_sweep(
    config_path: Union[str, Path],
    out_dir: Union[str, Path] = "results",
    jobs: int = Config.DEFAULT_JOBS,
    build: Optional[str] = None,
    on_done: Optional[Callable[[SweepResult], None]] = None,
) -> SweepOutputs:
    """
    读取配置、执行扫描、写出长表 CSV 与逐单元 JSON 汇总

    Raises:
        ConfigError: 配置非法
    """
    config = load_config(config_path)
    results = run_cells(config, jobs=jobs, build=build, on_done=on_done)
    out_dir = Path(out_dir)
    csv_path = write_results_csv(results, out_dir / f"{config.name}_results.csv")
    json_path = write_summary_json(results, out_dir / f"{config.name}_summary.json")
    logger.info(f"结果已写出: {csv_path}, {json_path}")
    return SweepOutputs(csv_path=csv_path, json_path=json_path, results=results)

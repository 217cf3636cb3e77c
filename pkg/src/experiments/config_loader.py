"""
实验配置：YAML 文件 → SweepConfig
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import yaml

from config import Config
from src.core.errors import ConfigError
from src.core.types import Campaign, Policy, check_epsilon
from src.market.datasets import DatasetKind, DatasetSpec
from src.market.simulator import OutcomeMode

logger = logging.getLogger(__name__)

TOP_LEVEL_KEYS = {
    "name", "horizon", "seeds", "policies", "eps_a_grid", "eps_b_grid", "allow_eps_override",
    "risk_alpha", "risk_window", "inject_noise", "outcome_mode", "warmup", "refit", "active_rule",
    "campaign", "dataset",
}
DATASET_KEYS = {
    "kind", "n_advertisers", "ctr_range", "cvr_range", "path", "kde_bandwidth", "n_competitors",
    "competitor_bid_high", "raw_bids", "budget_range",
}
CAMPAIGN_KEYS = {"budget", "cpc_cap"}
WARMUP_KEYS = {"rounds", "fraction"}
REFIT_KEYS = {"multi_starts", "max_alternations"}


@dataclass(frozen=True)
class SweepConfig:
    """一次 ε 网格扫描实验的完整描述"""
    name: str
    horizon: int
    seeds: Tuple[int, ...]
    policies: Tuple[Policy, ...]
    eps_a_grid: Tuple[float, ...]
    eps_b_grid: Tuple[float, ...]
    dataset: DatasetSpec
    budget: Optional[float] = 1.0  # None 表示使用数据集中的逐广告主预算
    cpc_cap: Optional[float] = 1.0
    allow_eps_override: bool = False
    risk_alpha: float = 1.0
    risk_window: Optional[int] = None
    inject_noise: bool = True
    outcome_mode: OutcomeMode = OutcomeMode.EXPECTED
    warmup_rounds: int = Config.WARMUP_ROUNDS
    warmup_fraction: float = Config.WARMUP_FRACTION
    multi_starts: int = Config.SIM_MULTI_STARTS
    max_alternations: int = Config.SIM_MAX_ALTERNATIONS
    active_rule: str = "fixed_point"
    source: Optional[str] = field(default=None, compare=False)

    @property
    def n_cells(self) -> int:
        return len(self.policies) * len(self.eps_a_grid) * len(self.eps_b_grid) * len(self.seeds)

    def campaigns(self, policy: Policy, eps_a: float, eps_b: float, n_advertisers: int,
                  budgets: Optional[np.ndarray] = None,
                  caps: Optional[np.ndarray] = None) -> List[Campaign]:
        """为数据集中每个广告主创建运行同一策略的投放活动"""
        out = []
        for i in range(n_advertisers):
            budget = self.budget if self.budget is not None else (None if budgets is None else float(budgets[i]))
            cap = self.cpc_cap if self.cpc_cap is not None else (None if caps is None else float(caps[i]))
            if budget is None or cap is None:
                raise ConfigError("campaign.budget/cpc_cap 设为 from_dataset 时数据集必须提供 budget/cpc_cap 列")
            out.append(Campaign(
                id=i, budget=budget, cpc_cap=cap, policy=policy,
                eps_a=eps_a if policy.uses_eps_a else 0.0,
                eps_b=eps_b if policy.uses_eps_b else 0.0,
                risk_alpha=self.risk_alpha,
                allow_eps_override=self.allow_eps_override,
            ))
        return out


def _check_keys(section: Dict[str, Any], allowed: set, where: str) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"{where} 包含未知字段: {', '.join(unknown)}")


def parse_grid(raw: Any, name: str, allow_override: bool) -> Tuple[float, ...]:
    """ε 网格：显式列表，或 {log_min, log_max, points} 对数等距"""
    if raw is None:
        raw = {"log_min": Config.EPS_MIN, "log_max": Config.EPS_MAX, "points": Config.EPS_GRID_POINTS}
    if isinstance(raw, dict):
        _check_keys(raw, {"log_min", "log_max", "points"}, name)
        try:
            low = float(raw.get("log_min", Config.EPS_MIN))
            high = float(raw.get("log_max", Config.EPS_MAX))
            points = int(raw.get("points", Config.EPS_GRID_POINTS))
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{name} 参数非法: {e}") from e
        if points < 1 or low <= 0 or high < low:
            raise ConfigError(f"{name} 需要 0 < log_min ≤ log_max 且 points ≥ 1")
        values = np.logspace(np.log10(low), np.log10(high), points) if points > 1 else np.array([low])
        grid = tuple(float(f"{v:.12g}") for v in values)
    elif isinstance(raw, (list, tuple)):
        try:
            grid = tuple(float(v) for v in raw)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{name} 必须为数值列表: {e}") from e
    else:
        raise ConfigError(f"{name} 必须为列表或对数网格描述")
    if not grid:
        raise ConfigError(f"{name} 为空")
    for eps in grid:
        try:
            check_epsilon(eps, name, allow_override)
        except ValueError as e:
            raise ConfigError(str(e)) from e
    return grid


def _pair(raw: Any, name: str) -> Optional[Tuple[float, float]]:
    if raw is None:
        return None
    if not isinstance(raw, (list, tuple)) or len(raw) != 2:
        raise ConfigError(f"{name} 必须为 [low, high]")
    return float(raw[0]), float(raw[1])


def parse_dataset(raw: Dict[str, Any], horizon: int, cpc_cap: Optional[float], base_dir: Path) -> DatasetSpec:
    _check_keys(raw, DATASET_KEYS, "dataset")
    try:
        kind = DatasetKind(raw.get("kind", "Synthetic"))
    except ValueError as e:
        raise ConfigError(f"未知数据集类型: {raw.get('kind')}") from e
    path = raw.get("path")
    if path is not None and not Path(path).is_absolute():
        path = str((base_dir / path).resolve())
    raw_bids = raw.get("raw_bids")
    bandwidth = raw.get("kde_bandwidth", "auto")
    try:
        return DatasetSpec(
            kind=kind,
            horizon=horizon,
            n_advertisers=int(raw.get("n_advertisers", 10)),
            ctr_range=_pair(raw.get("ctr_range", [0.01, 0.1]), "ctr_range"),
            cvr_range=_pair(raw.get("cvr_range", [0.01, 0.1]), "cvr_range"),
            path=path,
            kde_bandwidth=bandwidth if bandwidth == "auto" else float(bandwidth),
            n_competitors=int(raw.get("n_competitors", 1)),
            competitor_bid_high=None if raw.get("competitor_bid_high") is None else float(raw["competitor_bid_high"]),
            cpc_cap=1.0 if cpc_cap is None else cpc_cap,
            raw_bids=None if raw_bids is None else tuple(float(b) for b in raw_bids),
            budget_range=_pair(raw.get("budget_range"), "budget_range"),
        )
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"dataset 配置非法: {e}") from e


def _money(raw: Any, name: str) -> Optional[float]:
    if raw == "from_dataset":
        return None
    try:
        value = float(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{name} 必须为正数或 from_dataset") from e
    if value <= 0:
        raise ConfigError(f"{name} 必须为正: {value}")
    return value


def parse_config(raw: Dict[str, Any], base_dir: Union[str, Path] = ".", source: Optional[str] = None) -> SweepConfig:
    """校验字典形式的配置并构造 SweepConfig"""
    if not isinstance(raw, dict):
        raise ConfigError("配置文件顶层必须为映射")
    _check_keys(raw, TOP_LEVEL_KEYS, "配置")
    base_dir = Path(base_dir)

    horizon = int(raw.get("horizon", 100))
    if horizon < 1:
        raise ConfigError(f"horizon 必须 ≥ 1: {horizon}")
    seeds = raw.get("seeds", list(range(10)))
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds 必须为非空列表")
    try:
        policies = tuple(Policy(p) for p in raw.get("policies", ["NonRobust", "RobustJoint"]))
    except ValueError as e:
        raise ConfigError(f"未知策略: {e}") from e
    if not policies:
        raise ConfigError("policies 为空")

    allow_override = bool(raw.get("allow_eps_override", False))
    eps_a_grid = parse_grid(raw.get("eps_a_grid"), "eps_a_grid", allow_override)
    eps_b_grid = parse_grid(raw.get("eps_b_grid"), "eps_b_grid", allow_override)

    campaign = raw.get("campaign", {}) or {}
    _check_keys(campaign, CAMPAIGN_KEYS, "campaign")
    budget = _money(campaign.get("budget", 1.0), "campaign.budget")
    cpc_cap = _money(campaign.get("cpc_cap", 1.0), "campaign.cpc_cap")

    warmup = raw.get("warmup", {}) or {}
    _check_keys(warmup, WARMUP_KEYS, "warmup")
    refit = raw.get("refit", {}) or {}
    _check_keys(refit, REFIT_KEYS, "refit")

    try:
        outcome_mode = OutcomeMode(raw.get("outcome_mode", "expected"))
    except ValueError as e:
        raise ConfigError(f"未知 outcome_mode: {raw.get('outcome_mode')}") from e
    active_rule = raw.get("active_rule", "fixed_point")
    if active_rule not in ("fixed_point", "base_below_price"):
        raise ConfigError(f"未知 active_rule: {active_rule}")
    risk_alpha = float(raw.get("risk_alpha", 1.0))
    if risk_alpha < 0:
        raise ConfigError(f"risk_alpha 必须非负: {risk_alpha}")

    dataset = parse_dataset(raw.get("dataset", {}) or {}, horizon, cpc_cap, base_dir)
    return SweepConfig(
        name=str(raw.get("name", "sweep")),
        horizon=horizon,
        seeds=tuple(int(s) for s in seeds),
        policies=policies,
        eps_a_grid=eps_a_grid,
        eps_b_grid=eps_b_grid,
        dataset=dataset,
        budget=budget,
        cpc_cap=cpc_cap,
        allow_eps_override=allow_override,
        risk_alpha=risk_alpha,
        risk_window=None if raw.get("risk_window") is None else int(raw["risk_window"]),
        inject_noise=bool(raw.get("inject_noise", True)),
        outcome_mode=outcome_mode,
        warmup_rounds=int(warmup.get("rounds", Config.WARMUP_ROUNDS)),
        warmup_fraction=float(warmup.get("fraction", Config.WARMUP_FRACTION)),
        multi_starts=int(refit.get("multi_starts", Config.SIM_MULTI_STARTS)),
        max_alternations=int(refit.get("max_alternations", Config.SIM_MAX_ALTERNATIONS)),
        active_rule=active_rule,
        source=source,
    )


def load_config(path: Union[str, Path]) -> SweepConfig:
    """
    读取 YAML 实验配置

    Raises:
        ConfigError: 文件不存在、YAML 语法错误或字段非法
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"配置文件不存在: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError(f"YAML 解析失败: {e}") from e
    config = parse_config(raw, base_dir=path.parent, source=str(path))
    logger.info(f"加载配置 {path}: {config.n_cells} 个单元")
    return config


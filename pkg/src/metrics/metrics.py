"""
评估指标：TCV、CPC_avg 及跨种子聚合
"""
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from src.core.types import AuctionRound, SimulationState, SweepResult

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ["policy", "eps_a", "eps_b", "seed", "tcv", "cpc_avg",
                  "spend_total", "clicks_expected", "flags", "dataset", "build"]
GROUP_KEYS = ["policy", "eps_a", "eps_b"]


def _truth(rounds: Sequence[AuctionRound], n_campaigns: int):
    ctr = np.vstack([r.ctr_true[:n_campaigns] for r in rounds])
    cvr = np.vstack([r.cvr_true[:n_campaigns] for r in rounds])
    return ctr, cvr


def tcv(state: SimulationState, rounds: Sequence[AuctionRound]) -> float:
    """总转化价值 Σ_t Σ_i CTR·CVR·x"""
    wins = state.win_matrix()
    if wins.size == 0:
        return 0.0
    ctr, cvr = _truth(rounds[:wins.shape[0]], state.n_campaigns)
    return float(np.sum(ctr * cvr * wins))


def cpc_avg(state: SimulationState, rounds: Sequence[AuctionRound]) -> Optional[float]:
    """
    平均点击成本 (Σ x·bid)/(Σ x·CTR)

    期望点击为 0 时返回 None（CSV 中写为空字段）
    """
    wins = state.win_matrix()
    if wins.size == 0:
        return None
    ctr, _ = _truth(rounds[:wins.shape[0]], state.n_campaigns)
    clicks = float(np.sum(wins * ctr))
    if clicks <= 0.0:
        return None
    return float(np.sum(wins * state.bid_matrix()) / clicks)


def results_frame(results: Sequence[SweepResult]) -> pd.DataFrame:
    """扫描结果转为长表，按 (policy, eps_a, eps_b, seed) 排序"""
    records = [
        {
            "policy": r.policy.value,
            "eps_a": r.eps_a,
            "eps_b": r.eps_b,
            "seed": r.seed,
            "tcv": r.tcv,
            "cpc_avg": r.cpc_avg,
            "spend_total": r.spend_total,
            "clicks_expected": r.clicks_expected,
            "flags": ";".join(r.flags),
            "dataset": r.dataset,
            "build": r.build,
        }
        for r in sorted(results, key=lambda r: r.sort_key)
    ]
    return pd.DataFrame.from_records(records, columns=RESULT_COLUMNS)


def aggregate(results: Sequence[SweepResult]) -> pd.DataFrame:
    """
    按 (policy, ε_a, ε_b) 聚合均值与样本标准差（n−1）

    单种子单元的标准差记为 0，并标记 single_seed。
    """
    frame = results_frame(results)
    if frame.empty:
        return pd.DataFrame(columns=GROUP_KEYS + ["mean_tcv", "std_tcv", "mean_cpc", "std_cpc",
                                                  "n_seeds", "n_flagged", "single_seed"])
    frame["cpc_avg"] = pd.to_numeric(frame["cpc_avg"], errors="coerce")
    frame["flagged"] = frame["flags"].astype(bool)
    grouped = frame.groupby(GROUP_KEYS, sort=True)
    summary = grouped.agg(
        mean_tcv=("tcv", "mean"),
        std_tcv=("tcv", lambda s: s.std(ddof=1)),
        mean_cpc=("cpc_avg", "mean"),
        std_cpc=("cpc_avg", lambda s: s.std(ddof=1)),
        n_seeds=("seed", "count"),
        n_flagged=("flagged", "sum"),
    ).reset_index()
    summary["single_seed"] = summary["n_seeds"] == 1
    summary.loc[summary["single_seed"], "std_tcv"] = 0.0
    cpc_counts = grouped["cpc_avg"].count().values
    summary.loc[(cpc_counts == 1) & summary["mean_cpc"].notna(), "std_cpc"] = 0.0
    summary["n_flagged"] = summary["n_flagged"].astype(int)
    return summary


def _none_if_nan(value) -> Optional[float]:
    return None if value is None or pd.isna(value) else float(value)


def summary_records(summary: pd.DataFrame) -> List[Dict]:
    """聚合表转为 JSON 记录；缺失值写为 null"""
    return [
        {
            "policy": row.policy,
            "eps_a": float(row.eps_a),
            "eps_b": float(row.eps_b),
            "mean_tcv": _none_if_nan(row.mean_tcv),
            "std_tcv": _none_if_nan(row.std_tcv),
            "mean_cpc": _none_if_nan(row.mean_cpc),
            "std_cpc": _none_if_nan(row.std_cpc),
            "n_seeds": int(row.n_seeds),
            "n_flagged": int(row.n_flagged),
        }
        for row in summary.itertuples(index=False)
    ]


def write_results_csv(results: Sequence[SweepResult], path: Union[str, Path]) -> Path:
    """写出长表 CSV；未定义的 cpc_avg 写为空字段"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    results_frame(results).to_csv(path, index=False, na_rep="", encoding="utf-8")
    return path


def write_summary_json(results: Sequence[SweepResult], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = summary_records(aggregate(results))
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    return path

"""
数据集：合成拍卖流生成、CSV 读写、竞争出价分布的核平滑采样
"""
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from config import Config
from src.core.errors import DatasetError
from src.core.types import AuctionRound

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("t", "advertiser_id", "ctr_true", "cvr_true", "competitor_bid")
CSV_COLUMNS = ("t", "advertiser_id", "ctr_true", "cvr_true", "ctr_pred", "cvr_pred",
               "competitor_bid", "budget", "cpc_cap")


class DatasetKind(Enum):
    """数据集类型"""
    SYNTHETIC = "Synthetic"
    CSV_REPLAY = "CsvReplay"
    CSV_SMOOTHED = "CsvSmoothed"


@dataclass(frozen=True)
class DatasetSpec:
    """数据集描述"""
    kind: DatasetKind = DatasetKind.SYNTHETIC
    horizon: int = 100
    n_advertisers: int = 10
    ctr_range: Tuple[float, float] = (0.01, 0.1)  # (low, high]
    cvr_range: Tuple[float, float] = (0.01, 0.1)
    path: Optional[str] = None
    kde_bandwidth: Union[float, str] = "auto"
    n_competitors: int = 1
    competitor_bid_high: Optional[float] = None  # 合成竞争出价上界，默认 ctr_high × C
    cpc_cap: float = 1.0
    raw_bids: Optional[Tuple[float, ...]] = None  # 给定时竞争出价从其平滑分布采样
    budget_range: Optional[Tuple[float, float]] = None  # 给定时各广告主预算对数均匀采样

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon 必须 ≥ 1: {self.horizon}")
        if self.kind is DatasetKind.SYNTHETIC and self.n_advertisers < 1:
            raise ValueError(f"n_advertisers 必须 ≥ 1: {self.n_advertisers}")
        for name in ("ctr_range", "cvr_range"):
            low, high = getattr(self, name)
            if not (0.0 <= low <= high <= 1.0) or high <= 0.0:
                raise ValueError(f"{name}={getattr(self, name)} 必须满足 0 ≤ low ≤ high ≤ 1 且 high > 0")
        if self.kind is not DatasetKind.SYNTHETIC and not self.path:
            raise ValueError(f"{self.kind.value} 数据集需要 path")
        if self.n_competitors < 0:
            raise ValueError(f"n_competitors 必须非负: {self.n_competitors}")
        if self.budget_range is not None and not (0 < self.budget_range[0] <= self.budget_range[1]):
            raise ValueError(f"budget_range 非法: {self.budget_range}")


class BidSampler:
    """
    竞争出价采样器：scipy gaussian_kde 重采样并截断到 0

    带宽为 0 或原始出价全部相同（协方差奇异）时改用经验重采样，
    后者按给定带宽（auto 时为 KDE_BANDWIDTH_FLOOR）加高斯抖动。
    """

    def __init__(self, raw_bids: Sequence[float], bandwidth: Union[float, str] = "auto", seed: int = 0):
        self.raw = np.asarray(raw_bids, dtype=float).reshape(-1)
        self.rng = np.random.default_rng(seed)
        sigma = float(np.std(self.raw, ddof=1)) if self.raw.size > 1 else 0.0
        self.kde: Optional[stats.gaussian_kde] = None
        if bandwidth == "auto":
            if sigma > 0:
                self.kde = stats.gaussian_kde(self.raw, bw_method="silverman")
                self.bandwidth = float(self.kde.factor * sigma)
            else:
                self.bandwidth = Config.KDE_BANDWIDTH_FLOOR
        else:
            self.bandwidth = float(bandwidth)
            if self.bandwidth > 0 and sigma > 0:
                self.kde = stats.gaussian_kde(self.raw, bw_method=self.bandwidth / sigma)

    def sample(self, size: int) -> np.ndarray:
        if self.kde is not None:
            picks = self.kde.resample(size, self.rng).reshape(-1)
        else:
            picks = self.rng.choice(self.raw, size=size, replace=True)
            if self.bandwidth > 0:
                picks = picks + self.rng.normal(0.0, self.bandwidth, size=size)
        return np.maximum(picks, 0.0)


def silverman_bandwidth(raw_bids: Sequence[float]) -> float:
    """gaussian_kde 的 Silverman 核标准差，下限 KDE_BANDWIDTH_FLOOR"""
    raw = np.asarray(raw_bids, dtype=float).reshape(-1)
    sigma = float(np.std(raw, ddof=1)) if raw.size > 1 else 0.0
    if sigma == 0.0:
        return Config.KDE_BANDWIDTH_FLOOR
    factor = stats.gaussian_kde(raw, bw_method="silverman").factor
    return max(float(factor * sigma), Config.KDE_BANDWIDTH_FLOOR)


def smooth_bid_distribution(
    raw_bids: Sequence[float],
    bandwidth: Union[float, str] = "auto",
    seed: int = 0,
) -> BidSampler:
    """
    对原始竞争出价做核密度平滑，返回带种子的采样器

    bandwidth = 0 时退化为经验重采样；"auto" 使用 Silverman 规则；
    正数为核的标准差（出价单位）。
    """
    raw = np.asarray(raw_bids, dtype=float).reshape(-1)
    if raw.size == 0:
        raise ValueError("原始出价为空")
    if np.any(raw < 0) or not np.all(np.isfinite(raw)):
        raise ValueError("原始出价必须为非负有限值")
    if bandwidth != "auto":
        if isinstance(bandwidth, str):
            raise ValueError(f"未知带宽: {bandwidth}")
        if float(bandwidth) < 0:
            raise ValueError(f"带宽必须非负: {bandwidth}")
    return BidSampler(raw, bandwidth, seed)


def _uniform_rates(rng: np.random.Generator, bounds: Tuple[float, float], size) -> np.ndarray:
    """(low, high] 上的均匀分布"""
    low, high = bounds
    return high - rng.random(size) * (high - low)


def generate_synthetic(spec: DatasetSpec, seed: int) -> List[AuctionRound]:
    """
    生成合成拍卖流：每轮每个广告主独立均匀采样 CTR/CVR，预测值等于真实值
    （噪声由模拟器注入）；竞争出价默认均匀分布于 (0, ctr_high × C]
    """
    if spec.kind is not DatasetKind.SYNTHETIC:
        raise ValueError(f"generate_synthetic 只接受 Synthetic 数据集，当前为 {spec.kind.value}")
    rng = np.random.default_rng(seed)
    shape = (spec.horizon, spec.n_advertisers)
    ctr = _uniform_rates(rng, spec.ctr_range, shape)
    cvr = _uniform_rates(rng, spec.cvr_range, shape)

    budgets = None
    if spec.budget_range is not None:
        low, high = np.log(spec.budget_range[0]), np.log(spec.budget_range[1])
        budgets = np.exp(low + rng.random(spec.n_advertisers) * (high - low))

    if spec.raw_bids:
        sampler = smooth_bid_distribution(spec.raw_bids, spec.kde_bandwidth, seed=int(rng.integers(2 ** 32)))
        competitor = sampler.sample(spec.horizon * spec.n_competitors).reshape(spec.horizon, spec.n_competitors)
    else:
        high = spec.competitor_bid_high
        if high is None:
            high = spec.ctr_range[1] * spec.cpc_cap
        competitor = high - rng.random((spec.horizon, spec.n_competitors)) * high

    caps = np.full(spec.n_advertisers, spec.cpc_cap) if spec.budget_range is not None else None
    rounds = [
        AuctionRound(
            t=t,
            ctr_true=ctr[t], cvr_true=cvr[t],
            ctr_pred=ctr[t], cvr_pred=cvr[t],
            competitor_bids=tuple(competitor[t]),
            budgets=budgets, cpc_caps=caps,
        )
        for t in range(spec.horizon)
    ]
    logger.info(f"生成合成数据: T={spec.horizon}, n={spec.n_advertisers}, 竞争者={spec.n_competitors}, seed={seed}")
    return rounds


def _check_rate(value: float, name: str, line: int) -> float:
    if pd.isna(value):
        raise DatasetError(f"{name} 缺失", line)
    if not 0.0 <= value <= 1.0:
        raise DatasetError(f"{name}={value} 不在 [0, 1] 区间", line)
    return float(value)


def _check_money(value: float, name: str, line: int) -> Optional[float]:
    if pd.isna(value):
        return None
    if value < 0 or not np.isfinite(value):
        raise DatasetError(f"{name}={value} 必须为非负有限值", line)
    return float(value)


def load_csv(spec: DatasetSpec) -> List[AuctionRound]:
    """
    读取 CSV 拍卖流（表头必需，UTF-8，逗号分隔）

    每行对应一个广告主在某一轮的记录；advertiser_id 为空的行只携带竞争出价。
    缺少 ctr_pred/cvr_pred 列时预测值等于真实值。
    """
    path = Path(spec.path)
    if not path.exists():
        raise DatasetError(f"文件不存在: {path}")
    try:
        frame = pd.read_csv(path, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DatasetError(f"CSV 解析失败: {e}") from e

    missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
    if missing:
        raise DatasetError(f"缺少必需列: {', '.join(missing)}")
    for column in ("ctr_pred", "cvr_pred", "budget", "cpc_cap"):
        if column not in frame.columns:
            frame[column] = np.nan
    for column in CSV_COLUMNS:
        try:
            frame[column] = pd.to_numeric(frame[column])
        except (ValueError, TypeError) as e:
            raise DatasetError(f"列 {column} 包含非数值内容: {e}") from e

    # 第 1 行是表头
    frame["line"] = np.arange(len(frame)) + 2
    rounds: List[AuctionRound] = []
    advertiser_ids: Optional[List[int]] = None

    for t, group in frame.groupby("t", sort=True):
        if pd.isna(t):
            raise DatasetError("t 缺失", int(group["line"].iloc[0]))
        competitor = []
        rows = {}
        for row in group.itertuples(index=False):
            line = int(row.line)
            bid = _check_money(row.competitor_bid, "competitor_bid", line)
            if bid is not None:
                competitor.append(bid)
            if pd.isna(row.advertiser_id):
                continue
            ctr_true = _check_rate(row.ctr_true, "ctr_true", line)
            cvr_true = _check_rate(row.cvr_true, "cvr_true", line)
            ctr_pred = ctr_true if pd.isna(row.ctr_pred) else _check_rate(row.ctr_pred, "ctr_pred", line)
            cvr_pred = cvr_true if pd.isna(row.cvr_pred) else _check_rate(row.cvr_pred, "cvr_pred", line)
            budget = _check_money(row.budget, "budget", line)
            cap = _check_money(row.cpc_cap, "cpc_cap", line)
            advertiser = int(row.advertiser_id)
            if advertiser in rows:
                raise DatasetError(f"广告主 {advertiser} 在第 {int(t)} 轮重复出现", line)
            rows[advertiser] = (ctr_true, cvr_true, ctr_pred, cvr_pred, budget, cap)

        ids = sorted(rows)
        line = int(group["line"].iloc[0])
        if not ids:
            raise DatasetError(f"第 {int(t)} 轮没有广告主记录", line)
        if advertiser_ids is None:
            advertiser_ids = ids
        elif ids != advertiser_ids:
            raise DatasetError(f"第 {int(t)} 轮的广告主集合与首轮不一致", line)

        values = np.array([rows[i][:4] for i in ids], dtype=float)
        budgets = [rows[i][4] for i in ids]
        caps = [rows[i][5] for i in ids]
        rounds.append(AuctionRound(
            t=int(t),
            ctr_true=values[:, 0], cvr_true=values[:, 1],
            ctr_pred=values[:, 2], cvr_pred=values[:, 3],
            competitor_bids=tuple(competitor),
            budgets=None if any(b is None for b in budgets) else np.array(budgets),
            cpc_caps=None if any(c is None for c in caps) else np.array(caps),
        ))

    if not rounds:
        raise DatasetError("CSV 不包含任何数据行")
    logger.info(f"读取 CSV 数据: {path}，共 {len(rounds)} 轮，{len(advertiser_ids)} 个广告主")
    return rounds


def save_csv(rounds: Sequence[AuctionRound], path: Union[str, Path]) -> Path:
    """按读取格式写出 CSV；竞争出价多于广告主时追加 advertiser_id 为空的行"""
    records = []
    for r in rounds:
        n_rows = max(r.n_advertisers, len(r.competitor_bids))
        for k in range(n_rows):
            record = {column: None for column in CSV_COLUMNS}
            record["t"] = r.t
            if k < r.n_advertisers:
                record.update(
                    advertiser_id=k,
                    ctr_true=r.ctr_true[k], cvr_true=r.cvr_true[k],
                    ctr_pred=r.ctr_pred[k], cvr_pred=r.cvr_pred[k],
                    budget=None if r.budgets is None else r.budgets[k],
                    cpc_cap=None if r.cpc_caps is None else r.cpc_caps[k],
                )
            if k < len(r.competitor_bids):
                record["competitor_bid"] = r.competitor_bids[k]
            records.append(record)
    frame = pd.DataFrame.from_records(records, columns=list(CSV_COLUMNS))
    frame["t"] = frame["t"].astype(int)
    frame["advertiser_id"] = frame["advertiser_id"].astype("Int64")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, encoding="utf-8")
    return path


def load_dataset(spec: DatasetSpec, seed: int) -> List[AuctionRound]:
    """按数据集类型构造拍卖流；CsvSmoothed 用 CSV 中全部竞争出价的平滑分布逐轮重采样"""
    if spec.kind is DatasetKind.SYNTHETIC:
        return generate_synthetic(spec, seed)
    rounds = load_csv(spec)
    if spec.kind is DatasetKind.CSV_REPLAY:
        return rounds
    raw = [bid for r in rounds for bid in r.competitor_bids]
    if not raw:
        raise DatasetError("CsvSmoothed 需要至少一个竞争出价")
    sampler = smooth_bid_distribution(raw, spec.kde_bandwidth, seed=seed)
    n_competitors = max(spec.n_competitors, 1)
    return [
        AuctionRound(
            t=r.t, ctr_true=r.ctr_true, cvr_true=r.cvr_true, ctr_pred=r.ctr_pred, cvr_pred=r.cvr_pred,
            competitor_bids=tuple(sampler.sample(n_competitors)), budgets=r.budgets, cpc_caps=r.cpc_caps,
        )
        for r in rounds
    ]

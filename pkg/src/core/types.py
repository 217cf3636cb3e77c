"""
核心领域类型：广告活动、拍卖轮次、对偶变量、模拟状态与扫描结果
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from config import Config
from src.core.errors import InvalidRateError

ArrayLike = Union[Sequence[float], np.ndarray]


def _readonly(values: ArrayLike, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} 包含非有限值")
    arr.setflags(write=False)
    return arr


def validate_rates(values: ArrayLike, name: str = "rates") -> np.ndarray:
    """校验概率向量每个分量都在 [0, 1]，返回只读数组"""
    arr = _readonly(values, name)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        bad = int(np.argmax((arr < 0.0) | (arr > 1.0)))
        raise InvalidRateError(f"{name}[{bad}] = {arr[bad]} 不在 [0, 1] 区间")
    return arr


class Policy(Enum):
    """出价策略"""
    NON_ROBUST = "NonRobust"
    RISK = "Risk"
    ROBUST_CTR = "RobustCTR"
    ROBUST_CVR = "RobustCVR"
    ROBUST_JOINT = "RobustJoint"

    @property
    def uses_eps_a(self) -> bool:
        return self in (Policy.ROBUST_CTR, Policy.ROBUST_JOINT)

    @property
    def uses_eps_b(self) -> bool:
        return self in (Policy.ROBUST_CVR, Policy.ROBUST_JOINT)


@dataclass(frozen=True, eq=False)
class RateVector:
    """概率向量（CTR 或 CVR），长度为时间范围 T"""
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", validate_rates(self.values, "RateVector"))

    def __len__(self) -> int:
        return int(self.values.size)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def as_array(values: Union[RateVector, ArrayLike]) -> np.ndarray:
    """RateVector 或序列统一转换为 float 数组"""
    if isinstance(values, RateVector):
        return values.values
    return np.asarray(values, dtype=float).reshape(-1)


def check_epsilon(eps: float, name: str, allow_override: bool = False) -> None:
    """ε 必须为 0（无不确定性）或位于实验区间内"""
    if eps < 0:
        raise ValueError(f"{name} 必须非负: {eps}")
    if eps == 0 or allow_override:
        return
    if not (Config.EPS_MIN <= eps <= Config.EPS_MAX):
        raise ValueError(
            f"{name}={eps} 超出实验区间 [{Config.EPS_MIN}, {Config.EPS_MAX}]，"
            f"如需使用请显式开启 allow_eps_override"
        )


@dataclass(frozen=True)
class Campaign:
    """单个广告主的投放活动"""
    id: int
    budget: float  # B
    cpc_cap: float  # C
    policy: Policy = Policy.NON_ROBUST
    eps_a: float = 0.0  # CTR 不确定性预算
    eps_b: float = 0.0  # CVR 不确定性预算
    risk_alpha: float = 1.0
    allow_eps_override: bool = False

    def __post_init__(self):
        if self.id < 0:
            raise ValueError(f"广告主编号必须非负: {self.id}")
        if self.budget < 0 or self.cpc_cap < 0:
            raise ValueError(f"预算与 CPC 上限必须非负: B={self.budget}, C={self.cpc_cap}")
        if self.risk_alpha < 0:
            raise ValueError(f"risk_alpha 必须非负: {self.risk_alpha}")
        check_epsilon(self.eps_a, "eps_a", self.allow_eps_override)
        check_epsilon(self.eps_b, "eps_b", self.allow_eps_override)

    @property
    def can_bid(self) -> bool:
        return self.budget > 0 and self.cpc_cap > 0


@dataclass(frozen=True, eq=False)
class AuctionRound:
    """
    单轮拍卖数据：每个广告主的真实/预测 CTR、CVR，外部竞争者出价

    winning_price 在拍卖结束前为 None，结束后由 with_outcome 写入
    """
    t: int
    ctr_true: np.ndarray
    cvr_true: np.ndarray
    ctr_pred: np.ndarray
    cvr_pred: np.ndarray
    competitor_bids: Tuple[float, ...] = ()
    winning_price: Optional[float] = None
    budgets: Optional[np.ndarray] = None  # 各广告主预算（BAT 风格数据）
    cpc_caps: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("ctr_true", "cvr_true", "ctr_pred", "cvr_pred"):
            object.__setattr__(self, name, validate_rates(getattr(self, name), name))
        n = self.ctr_true.size
        if any(getattr(self, name).size != n for name in ("cvr_true", "ctr_pred", "cvr_pred")):
            raise ValueError(f"第 {self.t} 轮各速率向量长度不一致")
        bids = tuple(float(b) for b in self.competitor_bids)
        if any(b < 0 or not np.isfinite(b) for b in bids):
            raise ValueError(f"第 {self.t} 轮竞争者出价必须为非负有限值")
        object.__setattr__(self, "competitor_bids", bids)
        for name in ("budgets", "cpc_caps"):
            value = getattr(self, name)
            if value is not None:
                arr = _readonly(value, name)
                if arr.size != n or np.any(arr < 0):
                    raise ValueError(f"第 {self.t} 轮 {name} 长度或取值非法")
                object.__setattr__(self, name, arr)
        if self.winning_price is not None and self.winning_price < 0:
            raise ValueError(f"第 {self.t} 轮成交价必须非负")

    @property
    def n_advertisers(self) -> int:
        return int(self.ctr_true.size)

    @property
    def max_competitor_bid(self) -> float:
        return max(self.competitor_bids) if self.competitor_bids else 0.0

    def with_outcome(self, campaign_bids: ArrayLike) -> "AuctionRound":
        """一价拍卖结束后记录成交价 = 所有出价的最大值"""
        bids = np.asarray(campaign_bids, dtype=float)
        price = max(float(bids.max()) if bids.size else 0.0, self.max_competitor_bid)
        return AuctionRound(
            t=self.t,
            ctr_true=self.ctr_true,
            cvr_true=self.cvr_true,
            ctr_pred=self.ctr_pred,
            cvr_pred=self.cvr_pred,
            competitor_bids=self.competitor_bids,
            winning_price=price,
            budgets=self.budgets,
            cpc_caps=self.cpc_caps,
        )

    def with_predictions(self, ctr_pred: ArrayLike, cvr_pred: ArrayLike) -> "AuctionRound":
        return AuctionRound(
            t=self.t,
            ctr_true=self.ctr_true,
            cvr_true=self.cvr_true,
            ctr_pred=np.asarray(ctr_pred, dtype=float),
            cvr_pred=np.asarray(cvr_pred, dtype=float),
            competitor_bids=self.competitor_bids,
            winning_price=self.winning_price,
            budgets=self.budgets,
            cpc_caps=self.cpc_caps,
        )


@dataclass(frozen=True, eq=False)
class BidHistory:
    """单个广告主视角的历史：预测 CTR、CVR 与成交价"""
    ctr: np.ndarray
    cvr: np.ndarray
    wp: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ctr", validate_rates(self.ctr, "ctr"))
        object.__setattr__(self, "cvr", validate_rates(self.cvr, "cvr"))
        wp = _readonly(self.wp, "wp")
        if np.any(wp < 0):
            raise ValueError("成交价必须非负")
        object.__setattr__(self, "wp", wp)
        if not (self.ctr.size == self.cvr.size == wp.size):
            raise ValueError("历史中 ctr/cvr/wp 长度不一致")

    def __len__(self) -> int:
        return int(self.wp.size)

    @property
    def values(self) -> np.ndarray:
        """v_t = CTR_t · CVR_t"""
        return self.ctr * self.cvr

    @classmethod
    def from_rounds(cls, rounds: Sequence[AuctionRound], advertiser: int,
                    use_predictions: bool = True) -> "BidHistory":
        """从已完成的拍卖轮次中抽取某个广告主的历史"""
        if any(r.winning_price is None for r in rounds):
            raise ValueError("历史轮次必须已记录成交价")
        if use_predictions:
            ctr = [r.ctr_pred[advertiser] for r in rounds]
            cvr = [r.cvr_pred[advertiser] for r in rounds]
        else:
            ctr = [r.ctr_true[advertiser] for r in rounds]
            cvr = [r.cvr_true[advertiser] for r in rounds]
        wp = [r.winning_price for r in rounds]
        return cls(ctr=np.array(ctr), cvr=np.array(cvr), wp=np.array(wp))

    def extended(self, ctr: float, cvr: float, wp: float = 0.0) -> "BidHistory":
        """追加一条记录（用于把当前轮作为候选活跃轮次）"""
        return BidHistory(
            ctr=np.append(self.ctr, ctr),
            cvr=np.append(self.cvr, cvr),
            wp=np.append(self.wp, wp),
        )


@dataclass(frozen=True)
class DualVars:
    """对偶变量：p（预算）、q（CPC），联合策略另含 λa、λb"""
    p: float
    q: float
    lambda_a: Optional[float] = None
    lambda_b: Optional[float] = None

    def __post_init__(self):
        if self.p < 0 or self.q < 0:
            raise ValueError(f"对偶变量必须非负: p={self.p}, q={self.q}")
        for name in ("lambda_a", "lambda_b"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ValueError(f"{name} 必须非负: {value}")

    @property
    def total(self) -> float:
        return self.p + self.q

    @property
    def has_lambdas(self) -> bool:
        return self.lambda_a is not None and self.lambda_b is not None


@dataclass
class SimulationState:
    """
    单次模拟的可变状态

    不变量：spend + remaining_budget = initial_budget（逐广告主）
    """
    initial_budget: np.ndarray
    remaining_budget: np.ndarray
    spend: np.ndarray
    expected_clicks: np.ndarray
    expected_conversions: np.ndarray
    wins: List[np.ndarray] = field(default_factory=list)  # 每轮的 0/1 获胜指示
    bids: List[np.ndarray] = field(default_factory=list)  # 每轮各广告主提交的出价
    history: List[AuctionRound] = field(default_factory=list)
    realized_clicks: Optional[np.ndarray] = None  # 伯努利模式下的实现值
    realized_conversions: Optional[np.ndarray] = None
    flags: set = field(default_factory=set)

    @classmethod
    def create(cls, budgets: ArrayLike) -> "SimulationState":
        initial = np.array(budgets, dtype=float)
        if np.any(initial < 0):
            raise ValueError("初始预算必须非负")
        n = initial.size
        return cls(
            initial_budget=initial,
            remaining_budget=initial.copy(),
            spend=np.zeros(n),
            expected_clicks=np.zeros(n),
            expected_conversions=np.zeros(n),
            realized_clicks=np.zeros(n),
            realized_conversions=np.zeros(n),
        )

    @property
    def n_campaigns(self) -> int:
        return int(self.initial_budget.size)

    @property
    def t(self) -> int:
        """已完成的轮数"""
        return len(self.history)

    def win_matrix(self) -> np.ndarray:
        if not self.wins:
            return np.zeros((0, self.n_campaigns))
        return np.vstack(self.wins)

    def bid_matrix(self) -> np.ndarray:
        if not self.bids:
            return np.zeros((0, self.n_campaigns))
        return np.vstack(self.bids)

    def accounting_gap(self) -> float:
        """|spend + remaining − initial| 的最大值"""
        return float(np.max(np.abs(self.spend + self.remaining_budget - self.initial_budget), initial=0.0))


@dataclass(frozen=True)
class SweepResult:
    """扫描网格中单个 (policy, ε_a, ε_b, seed) 单元的结果"""
    policy: Policy
    eps_a: float
    eps_b: float
    seed: int
    tcv: float
    cpc_avg: Optional[float]  # 无点击时为 None
    spend_total: float = 0.0
    clicks_expected: float = 0.0
    flags: Tuple[str, ...] = ()
    dataset: str = ""
    build: str = ""

    def __post_init__(self):
        if self.tcv < 0:
            raise ValueError(f"TCV 必须非负: {self.tcv}")
        if self.cpc_avg is not None and self.cpc_avg < 0:
            raise ValueError(f"CPC_avg 必须非负: {self.cpc_avg}")
        object.__setattr__(self, "flags", tuple(sorted(set(self.flags))))

    @property
    def flagged(self) -> bool:
        return bool(self.flags)

    @property
    def sort_key(self) -> tuple:
        return (self.policy.value, self.eps_a, self.eps_b, self.seed)

"""
一价拍卖模拟器
逐轮让各广告主按策略出价，结算成交并记账
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config import Config
from src.bidding.agent import CampaignBidder
from src.core.types import AuctionRound, Campaign, SimulationState, SweepResult
from src.metrics.metrics import cpc_avg, tcv
from src.risk.budget_guard import BudgetGuard
from src.uncertainty.sets import perturb_rates

logger = logging.getLogger(__name__)


class ChargeRule(Enum):
    """扣费规则：min(出价, 剩余预算)"""
    MIN_BID_BUDGET = "MinBidBudget"


class OutcomeMode(Enum):
    """点击/转化记账方式"""
    EXPECTED = "expected"
    BERNOULLI = "bernoulli"


@dataclass
class SimulationConfig:
    """单次模拟配置"""
    horizon: int
    campaigns: List[Campaign]
    eps_a: float = 0.0  # 注入到预测 CTR 的噪声
    eps_b: float = 0.0  # 注入到预测 CVR 的噪声
    seed: int = 0
    charge_rule: ChargeRule = ChargeRule.MIN_BID_BUDGET
    warmup_bid: Optional[float] = None  # None 表示 WARMUP_FRACTION × B / T
    warmup_rounds: int = Config.WARMUP_ROUNDS
    warmup_fraction: float = Config.WARMUP_FRACTION
    inject_noise: bool = True
    outcome_mode: OutcomeMode = OutcomeMode.EXPECTED
    multi_starts: int = Config.SIM_MULTI_STARTS
    max_alternations: int = Config.SIM_MAX_ALTERNATIONS
    active_rule: str = "fixed_point"
    risk_window: Optional[int] = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon 必须 ≥ 1: {self.horizon}")
        if not self.campaigns:
            raise ValueError("至少需要一个广告活动")
        ids = [c.id for c in self.campaigns]
        if ids != list(range(len(ids))):
            raise ValueError(f"广告活动编号必须为 0..n-1: {ids}")
        if self.eps_a < 0 or self.eps_b < 0:
            raise ValueError("注入噪声的 ε 必须非负")


@dataclass
class SimulationRun:
    """模拟输出：最终状态、使用的拍卖流（含注入噪声的预测）与汇总行"""
    state: SimulationState
    rounds: List[AuctionRound]
    results: List[SweepResult] = field(default_factory=list)


def run_auction(bids: Sequence[float]) -> Tuple[Optional[int], float]:
    """
    一价拍卖：最高出价者获胜并支付自己的出价，平局取编号最小者

    Returns:
        (winner, price)，全部出价为 0 时 winner 为 None
    """
    values = np.asarray(bids, dtype=float)
    if values.size == 0:
        return None, 0.0
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise ValueError(f"出价必须为非负有限值: {values}")
    winner = int(np.argmax(values))
    price = float(values[winner])
    if price <= 0.0:
        return None, 0.0
    return winner, price


def charge(state: SimulationState, winner: int, bid: float) -> SimulationState:
    """扣费 min(bid, remaining)，剩余预算不会为负"""
    if not 0 <= winner < state.n_campaigns:
        raise ValueError(f"非法的获胜者编号: {winner}")
    amount = min(max(bid, 0.0), float(state.remaining_budget[winner]))
    state.spend[winner] += amount
    state.remaining_budget[winner] -= amount
    if state.remaining_budget[winner] < 0:
        state.remaining_budget[winner] = 0.0
    return state


def inject_prediction_noise(
    rounds: Sequence[AuctionRound],
    eps_a: float,
    eps_b: float,
    seed: int,
) -> List[AuctionRound]:
    """
    预测值 = 真实速率沿时间维度的球面扰动（逐广告主独立）

    满足 ½‖CTR_pred − CTR_true‖² ≤ ε_a，CVR 同理。
    """
    if not rounds:
        return []
    ctr_true = np.vstack([r.ctr_true for r in rounds])
    cvr_true = np.vstack([r.cvr_true for r in rounds])
    ctr_pred = np.empty_like(ctr_true)
    cvr_pred = np.empty_like(cvr_true)
    for i in range(ctr_true.shape[1]):
        ctr_pred[:, i] = perturb_rates(ctr_true[:, i], eps_a, seed, stream=(i, 0))
        cvr_pred[:, i] = perturb_rates(cvr_true[:, i], eps_b, seed, stream=(i, 1))
    return [r.with_predictions(ctr_pred[k], cvr_pred[k]) for k, r in enumerate(rounds)]


class AuctionSimulator:
    """模拟器：严格按时间顺序推进的状态机"""

    def __init__(self, config: SimulationConfig, rounds: Sequence[AuctionRound]):
        """
        Args:
            config: 模拟配置
            rounds: 数据集拍卖流，长度不少于 horizon
        """
        if len(rounds) < config.horizon:
            raise ValueError(f"数据集只有 {len(rounds)} 轮，少于模拟长度 {config.horizon}")
        n = len(config.campaigns)
        if rounds[0].n_advertisers < n:
            raise ValueError(f"数据集只有 {rounds[0].n_advertisers} 个广告主，少于活动数 {n}")
        self.config = config
        rounds = list(rounds[:config.horizon])
        if config.inject_noise:
            rounds = inject_prediction_noise(rounds, config.eps_a, config.eps_b, config.seed)
        self.rounds = rounds
        self.state = SimulationState.create([c.budget for c in config.campaigns])
        self.bidders = [
            CampaignBidder(
                c, config.horizon,
                warmup_rounds=config.warmup_rounds,
                warmup_bid=config.warmup_bid,
                warmup_fraction=config.warmup_fraction,
                multi_starts=config.multi_starts,
                max_alternations=config.max_alternations,
                active_rule=config.active_rule,
                risk_window=config.risk_window,
            )
            for c in config.campaigns
        ]
        self.guard = BudgetGuard()
        self.rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), 7]))

    def collect_bids(self, round_: AuctionRound) -> np.ndarray:
        """每个广告主只用历史、当前预测与自身配置出价"""
        t = self.state.t
        bids = np.zeros(len(self.bidders))
        for i, bidder in enumerate(self.bidders):
            decision = bidder.bid(
                t, self.state.history,
                float(round_.ctr_pred[i]), float(round_.cvr_pred[i]),
                float(self.state.remaining_budget[i]),
            )
            bids[i] = decision.bid
        return bids

    def step(self, round_: AuctionRound) -> SimulationState:
        """推进一轮：出价、结算、扣费、记录期望点击与转化"""
        state = self.state
        if round_.t != self.rounds[state.t].t:
            raise ValueError(f"期望第 {self.rounds[state.t].t} 轮，收到第 {round_.t} 轮")
        bids = self.collect_bids(round_)
        n = bids.size
        winner, price = run_auction(np.concatenate((bids, round_.competitor_bids)))

        wins = np.zeros(n)
        if winner is not None and winner < n:
            charge(state, winner, bids[winner])
            wins[winner] = 1.0
            ctr, cvr = round_.ctr_true[winner], round_.cvr_true[winner]
            state.expected_clicks[winner] += ctr
            state.expected_conversions[winner] += ctr * cvr
            if self.config.outcome_mode is OutcomeMode.BERNOULLI:
                clicked = self.rng.random() < ctr
                state.realized_clicks[winner] += float(clicked)
                state.realized_conversions[winner] += float(clicked and self.rng.random() < cvr)

        state.wins.append(wins)
        state.bids.append(bids)
        state.history.append(round_.with_outcome(bids))

        check = self.guard.check(state)
        if not check.ok:
            logger.error(f"第 {round_.t} 轮预算核对失败: {check.reason} {check.details}")
            state.flags.add("budget_violation")
        return state

    def run(self) -> SimulationState:
        for round_ in self.rounds:
            self.step(round_)
        for bidder in self.bidders:
            self.state.flags.update(f for f in bidder.flags if f != "warmup")
        return self.state


def run_simulation(
    config: SimulationConfig,
    dataset: Sequence[AuctionRound],
    dataset_name: str = "",
    build: str = "",
) -> SimulationRun:
    """
    运行完整模拟并生成一行汇总结果

    Raises:
        ValueError: 数据集短于模拟长度
    """
    simulator = AuctionSimulator(config, dataset)
    state = simulator.run()
    rounds = simulator.rounds
    policy = config.campaigns[0].policy
    result = SweepResult(
        policy=policy,
        eps_a=config.eps_a,
        eps_b=config.eps_b,
        seed=config.seed,
        tcv=tcv(state, rounds),
        cpc_avg=cpc_avg(state, rounds),
        spend_total=float(state.spend.sum()),
        clicks_expected=float(state.expected_clicks.sum()),
        flags=tuple(state.flags),
        dataset=dataset_name,
        build=build,
    )
    logger.info(
        f"模拟完成: {policy.value} ε_a={config.eps_a:g} ε_b={config.eps_b:g} seed={config.seed} "
        f"TCV={result.tcv:.6f} 花费={result.spend_total:.4f}"
    )
    return SimulationRun(state=state, rounds=rounds, results=[result])

"""
单个广告主的出价器：冷启动、逐步重新拟合对偶变量、按策略出价
"""
import logging
import math
from typing import Optional, Sequence

import numpy as np

from config import Config
from src.bidding import policies
from src.bidding.duals import FitResult, fit_duals
from src.bidding.policies import BidDecision
from src.core.types import AuctionRound, BidHistory, Campaign, DualVars, Policy

logger = logging.getLogger(__name__)


class CampaignBidder:
    """
    出价器只能看到已结束轮次的历史与当前轮的预测值

    当前轮追加到历史末尾并总是计入活跃集（fixed_point 规则下 wp 记为 0，
    base_below_price 规则下记为 +∞），因此实时出价总带有鲁棒扰动。
    """

    def __init__(
        self,
        campaign: Campaign,
        horizon: int,
        warmup_rounds: int = Config.WARMUP_ROUNDS,
        warmup_bid: Optional[float] = None,
        warmup_fraction: float = Config.WARMUP_FRACTION,
        multi_starts: int = Config.SIM_MULTI_STARTS,
        max_alternations: int = Config.SIM_MAX_ALTERNATIONS,
        active_rule: str = "fixed_point",
        risk_window: Optional[int] = None,
    ):
        """
        Args:
            campaign: 投放活动
            horizon: 总轮数 T
            warmup_rounds: 冷启动轮数
            warmup_bid: 冷启动出价，默认 warmup_fraction × B / T
            warmup_fraction: 冷启动出价占平均每轮预算的比例
            multi_starts: 回退搜索的起点数
            max_alternations: 活跃集与 LP 的交替轮数
            active_rule: 活跃集规则（fixed_point / base_below_price）
            risk_window: RiskBid 的滚动窗口，None 表示全部历史
        """
        self.campaign = campaign
        self.horizon = horizon
        self.warmup_rounds = warmup_rounds
        self.warmup_bid = (
            warmup_fraction * campaign.budget / max(horizon, 1)
            if warmup_bid is None else warmup_bid
        )
        self.multi_starts = multi_starts
        self.max_alternations = max_alternations
        self.active_rule = active_rule
        self.risk_window = risk_window
        self.duals = DualVars(p=Config.INITIAL_DUAL_P, q=Config.INITIAL_DUAL_Q)
        self.last_fit: Optional[FitResult] = None
        self.flags: set = set()

    @property
    def policy(self) -> Policy:
        return self.campaign.policy

    def refit(self, history: BidHistory, remaining_budget: float, t: int) -> DualVars:
        """用已结束轮次重新拟合对偶变量；预算按剩余轮数折算到历史长度"""
        budget_fit = remaining_budget * len(history) / max(1, self.horizon - t)
        result = fit_duals(
            self.policy, history, budget_fit, self.campaign.cpc_cap,
            eps_a=self.campaign.eps_a, eps_b=self.campaign.eps_b,
            warm_start=self.duals, multi_starts=self.multi_starts,
            max_alternations=self.max_alternations, rule=self.active_rule,
        )
        self.last_fit = result
        if not result.converged:
            self.flags.add("fit_not_converged")
        if result.degenerate:
            logger.info(f"广告主 {self.campaign.id} 第 {t} 轮对偶退化 (p+q≈0)，沿用上一组对偶")
            self.flags.add("degenerate_duals")
            if self.policy is Policy.ROBUST_JOINT and not self.duals.has_lambdas:
                self.duals = DualVars(self.duals.p, self.duals.q, result.duals.lambda_a, result.duals.lambda_b)
            return self.duals
        self.duals = result.duals
        return self.duals

    def _ctr_std(self, history: BidHistory) -> float:
        values = history.ctr if self.risk_window is None else history.ctr[-self.risk_window:]
        if values.size < 2:
            return 0.0
        return float(np.std(values, ddof=1))

    def bid(
        self,
        t: int,
        rounds: Sequence[AuctionRound],
        ctr_pred: float,
        cvr_pred: float,
        remaining_budget: float,
    ) -> BidDecision:
        """
        生成第 t 轮出价

        Args:
            t: 当前轮次（从 0 开始）
            rounds: 已结束的拍卖轮次（含成交价）
            ctr_pred: 当前轮预测 CTR
            cvr_pred: 当前轮预测 CVR
            remaining_budget: 剩余预算
        """
        if remaining_budget <= 0 or not self.campaign.can_bid:
            return BidDecision(t=t, bid=0.0, delta=0.0, active=False)
        if t < self.warmup_rounds or not rounds:
            return BidDecision(t=t, bid=self.warmup_bid, delta=0.0, active=False, flags=("warmup",))

        history = BidHistory.from_rounds(rounds, self.campaign.id)
        duals = self.refit(history, remaining_budget, t)
        C = self.campaign.cpc_cap

        if self.policy is Policy.NON_ROBUST:
            return BidDecision(t=t, bid=policies.bid_nonrobust(duals, C, ctr_pred, cvr_pred), delta=0.0, active=False)
        if self.policy is Policy.RISK:
            value = policies.bid_risk(duals, C, ctr_pred, self._ctr_std(history), self.campaign.risk_alpha, cvr_pred)
            return BidDecision(t=t, bid=value, delta=0.0, active=False)

        live_wp = math.inf if self.active_rule == "base_below_price" else 0.0
        extended = history.extended(ctr_pred, cvr_pred, wp=live_wp)
        if self.policy is Policy.ROBUST_CTR:
            decisions = policies.bids_robust_ctr(
                duals, C, extended.ctr, extended.cvr, extended.wp, self.campaign.eps_a, rule=self.active_rule)
        elif self.policy is Policy.ROBUST_CVR:
            decisions = policies.bids_robust_cvr(
                duals, C, extended.ctr, extended.cvr, extended.wp, self.campaign.eps_b, rule=self.active_rule)
        else:
            decisions = policies.bids_robust_joint(
                duals, C, extended.ctr, extended.cvr, extended.wp,
                self.campaign.eps_a, self.campaign.eps_b, rule=self.active_rule)
        last = decisions[-1]
        self.flags.update(last.flags)
        return BidDecision(t=t, bid=last.bid, delta=last.delta, active=last.active, flags=last.flags)

"""
预算安全检查：每轮结算后核对花费不超预算、账目恒等式成立
"""
from dataclasses import dataclass

import numpy as np

from config import Config
from src.core.types import SimulationState


@dataclass
class GuardResult:
    """预算检查结果"""
    ok: bool
    reason: str
    details: dict


class BudgetGuard:
    """预算守卫"""

    def __init__(self, tolerance: float = Config.BUDGET_TOLERANCE):
        """
        Args:
            tolerance: 浮点比较容差（按初始预算相对缩放）
        """
        self.tolerance = tolerance

    def check(self, state: SimulationState) -> GuardResult:
        """
        检查所有预算条件

        Returns:
            GuardResult: ok=False 时 details 给出违规的广告主
        """
        scale = np.maximum(state.initial_budget, 1.0)

        # 1. 剩余预算非负
        negative = np.flatnonzero(state.remaining_budget < -self.tolerance * scale)
        if negative.size:
            return GuardResult(
                ok=False,
                reason="剩余预算为负",
                details={"type": "negative_remaining", "campaigns": negative.tolist(),
                         "remaining": state.remaining_budget[negative].tolist()},
            )

        # 2. 花费不超过预算
        over = np.flatnonzero(state.spend > state.initial_budget + self.tolerance * scale)
        if over.size:
            return GuardResult(
                ok=False,
                reason="花费超过预算",
                details={"type": "overspend", "campaigns": over.tolist(),
                         "spend": state.spend[over].tolist(),
                         "budget": state.initial_budget[over].tolist()},
            )

        # 3. spend + remaining = initial
        gap = np.abs(state.spend + state.remaining_budget - state.initial_budget)
        broken = np.flatnonzero(gap > self.tolerance * scale * 10)
        if broken.size:
            return GuardResult(
                ok=False,
                reason="账目恒等式不成立",
                details={"type": "accounting_identity", "campaigns": broken.tolist(),
                         "gap": gap[broken].tolist()},
            )

        return GuardResult(ok=True, reason="预算检查通过", details={})

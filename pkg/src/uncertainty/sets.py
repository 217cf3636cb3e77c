"""
不确定集：ε 校准、最坏情况速率、非负性上界与实验扰动
"""
import logging
import math
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from src.core.errors import EmptySampleError
from src.core.types import ArrayLike, RateVector, as_array

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class UncertaintyBudget:
    """MSE 球的不确定性预算：½‖a − â‖² ≤ ε，半径 α = √(2ε)"""
    epsilon: float

    def __post_init__(self):
        if self.epsilon < 0 or not math.isfinite(self.epsilon):
            raise ValueError(f"epsilon 必须为非负有限值: {self.epsilon}")

    @property
    def radius(self) -> float:
        return math.sqrt(2.0 * self.epsilon)


@dataclass(frozen=True)
class CalibrationResult:
    """ε 校准结果"""
    epsilon: float
    level: float  # 修正后的分位水平
    clamped: bool  # 水平 > 1 时退化为样本最大值


def calibrate_epsilon(
    validation_losses: Sequence[float],
    q: float,
    n_advertisers: int,
    convention: str = "coverage",
) -> CalibrationResult:
    """
    用验证集损失的经验分位数校准 ε

    分位水平 λ 对应第 ceil(λ·n) 个顺序统计量。

    注意：默认的 "coverage" 约定与 (1 + 1/I)(1 − q) 水平不同，
    例如 [1, 2, 3, 4]、q = 0.75、I = 3 在默认约定下得到 4（水平 1.0），
    要得到 (1 + 1/I)(1 − q) 水平下的 2 需传 convention="literal"。

    Args:
        validation_losses: 每个广告主的验证损失
        q: 置信水平，(0, 1)
        n_advertisers: 广告主数 I，用于 (1 + 1/I) 有限样本修正
        convention: "coverage" 取 (1 + 1/I)·q 水平，保证以至少 q 的概率覆盖；
            "literal" 取 (1 + 1/I)(1 − q) 水平
    """
    losses = np.sort(np.asarray(validation_losses, dtype=float).reshape(-1))
    if losses.size == 0:
        raise EmptySampleError("校准样本为空")
    if not 0.0 < q < 1.0:
        raise ValueError(f"q 必须在 (0, 1) 内: {q}")
    if n_advertisers < 1:
        raise ValueError(f"广告主数必须为正: {n_advertisers}")

    correction = 1.0 + 1.0 / n_advertisers
    if convention == "coverage":
        level = correction * q
    elif convention == "literal":
        level = correction * (1.0 - q)
    else:
        raise ValueError(f"未知分位约定: {convention}")

    if level > 1.0:
        logger.warning(f"分位水平 {level:.4f} > 1，返回样本最大值")
        return CalibrationResult(epsilon=float(losses[-1]), level=level, clamped=True)

    n = losses.size
    # 浮点误差会把 1.0·4 算成 4.000000000000001，先做容差取整
    rank = math.ceil(round(level * n, 9))
    rank = min(max(rank, 1), n)
    return CalibrationResult(epsilon=float(losses[rank - 1]), level=level, clamped=False)


def worst_case_rates(
    rate_pred: Union[RateVector, ArrayLike],
    weights_m: ArrayLike,
    budget: UncertaintyBudget,
) -> np.ndarray:
    """
    mᵀa 在 ε 球上的精确最小点：ã = â − √(2ε)·m/‖m‖

    ‖m‖ = 0 时目标为常数，返回预测值本身。结果不截断到 [0, 1]。
    """
    pred = as_array(rate_pred)
    m = np.asarray(weights_m, dtype=float).reshape(-1)
    if m.shape != pred.shape:
        raise ValueError(f"权重长度 {m.size} 与速率长度 {pred.size} 不一致")
    if np.any(m < 0):
        raise ValueError("权重 m 必须逐分量非负")
    norm = float(np.linalg.norm(m))
    if norm == 0.0 or budget.epsilon == 0.0:
        return pred.copy()
    return pred - (budget.radius / norm) * m


def epsilon_nonneg_bound(ctr_pred: Union[RateVector, ArrayLike], weights_m: ArrayLike) -> float:
    """
    最坏情况速率保持非负的最大 ε

    条件 √(2ε)·m_t/‖m‖ ≤ ĉ_t 对所有 m_t > 0 成立，即
    ε_max = ½·min_t (ĉ_t·‖m‖/m_t)²。权重全为 0 时返回 +inf。
    """
    printed = printed_epsilon_bound(ctr_pred, weights_m)
    if math.isinf(printed):
        return math.inf
    return 0.5 * printed ** 2


def printed_epsilon_bound(ctr_pred: Union[RateVector, ArrayLike], weights_m: ArrayLike) -> float:
    """未平方形式的界 min_t ĉ_t·‖m‖/m_t（量纲与 ε 不一致，仅供对照）"""
    ctr = as_array(ctr_pred)
    m = np.asarray(weights_m, dtype=float).reshape(-1)
    if m.shape != ctr.shape:
        raise ValueError(f"权重长度 {m.size} 与速率长度 {ctr.size} 不一致")
    if np.any(m < 0):
        raise ValueError("权重 m 必须逐分量非负")
    positive = m > 0
    if not np.any(positive):
        return math.inf
    norm = float(np.linalg.norm(m))
    return float(np.min(ctr[positive] * norm / m[positive]))


def perturb_rates(
    rate_true: Union[RateVector, ArrayLike],
    epsilon: float,
    rng_seed: int,
    stream: Tuple[int, ...] = (),
) -> np.ndarray:
    """
    在 ε 球边界上均匀采样方向扰动真实速率，再截断到 [0, 1]

    同一 (rng_seed, stream) 结果确定；stream 用于区分广告主与 CTR/CVR。
    """
    if epsilon < 0:
        raise ValueError(f"epsilon 必须非负: {epsilon}")
    rates = as_array(rate_true)
    if epsilon == 0 or rates.size == 0:
        return rates.copy()
    rng = np.random.default_rng(np.random.SeedSequence([int(rng_seed), *map(int, stream)]))
    direction = rng.standard_normal(rates.size)
    norm = float(np.linalg.norm(direction))
    while norm == 0.0:
        direction = rng.standard_normal(rates.size)
        norm = float(np.linalg.norm(direction))
    noised = rates + math.sqrt(2.0 * epsilon) * direction / norm
    return np.clip(noised, 0.0, 1.0)

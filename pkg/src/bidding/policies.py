"""
出价公式：非鲁棒基线、RiskBid、三种鲁棒扰动出价，以及活跃集判定
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, FrozenSet, List, Optional, Tuple, Union

import numpy as np

from config import Config
from src.core.errors import SingularDenominatorError, UndefinedBidError
from src.core.types import ArrayLike, DualVars, RateVector, as_array

logger = logging.getLogger(__name__)

ACTIVE_RULES = ("fixed_point", "base_below_price")


@dataclass(frozen=True)
class BidDecision:
    """单轮出价决策：bid = base + delta（为负时截断为 0 并标记）"""
    t: int
    bid: float
    delta: float
    active: bool
    flags: Tuple[str, ...] = ()


@dataclass(frozen=True)
class ActiveSetResult:
    """活跃集判定结果"""
    indices: FrozenSet[int]
    rule: str = "fixed_point"

    @property
    def mask(self) -> np.ndarray:
        return np.array(sorted(self.indices), dtype=int)


# 给定活跃集成员掩码，返回每个 t 的 δ_t（只在成员上使用）
PerturbationFn = Callable[[np.ndarray], np.ndarray]


def _require_duals(duals: DualVars) -> float:
    total = duals.p + duals.q
    if total <= 0:
        raise UndefinedBidError(f"p + q = {total}，出价公式无定义")
    return total


def base_bids(duals: DualVars, C: float, ctr: ArrayLike, cvr: ArrayLike) -> np.ndarray:
    """向量化的非鲁棒出价 (CTR·CVR + q·C·CTR)/(p + q)"""
    total = _require_duals(duals)
    ctr = as_array(ctr)
    cvr = as_array(cvr)
    return (ctr * cvr + duals.q * C * ctr) / total


def bid_nonrobust(duals: DualVars, C: float, ctr: float, cvr: float) -> float:
    """
    非鲁棒出价：(1/(p+q))·cvr·ctr + (q/(p+q))·C·ctr

    Raises:
        UndefinedBidError: p + q = 0
    """
    total = _require_duals(duals)
    return (cvr * ctr + duals.q * C * ctr) / total


def bid_risk(duals: DualVars, C: float, ctr: float, ctr_std: float, alpha: float, cvr: float) -> float:
    """RiskBid：在 ctr_risk = max(0, ctr − α·std) 处计算非鲁棒出价"""
    if ctr_std < 0:
        raise ValueError(f"ctr_std 必须非负: {ctr_std}")
    ctr_risk = max(0.0, ctr - alpha * ctr_std)
    return bid_nonrobust(duals, C, ctr_risk, cvr)


def _set_stats(values: np.ndarray, member: np.ndarray) -> Tuple[int, float]:
    """|𝒯| 与 ‖values_𝒯‖"""
    return int(member.sum()), float(np.sqrt(np.sum(values[member] ** 2)))


def _safe_ratio(num: np.ndarray, den: float) -> np.ndarray:
    if den <= 0:
        return np.zeros_like(num, dtype=float)
    return num / den


def ctr_perturbation(duals: DualVars, C: float, cvr: np.ndarray, alpha: float) -> PerturbationFn:
    """δ^ctr = −(α/(p+q))·(C·q/√|𝒯| + CVR_t²/√Σ_{𝒯} CVR²)"""
    total = _require_duals(duals)

    def delta(member: np.ndarray) -> np.ndarray:
        size, norm = _set_stats(cvr, member)
        if size == 0:
            return np.zeros_like(cvr, dtype=float)
        return -(alpha / total) * (C * duals.q / math.sqrt(size) + _safe_ratio(cvr ** 2, norm))

    return delta


def cvr_perturbation(duals: DualVars, ctr: np.ndarray, alpha: float) -> PerturbationFn:
    """δ^cvr = −(α′/(p+q))·CTR_t/√Σ_{𝒯} CTR²，不含 CPC 项"""
    total = _require_duals(duals)

    def delta(member: np.ndarray) -> np.ndarray:
        _, norm = _set_stats(ctr, member)
        return -(alpha / total) * _safe_ratio(ctr, norm)

    return delta


def joint_perturbation(duals: DualVars, a_terms: np.ndarray, alpha: float) -> PerturbationFn:
    """δ^joint = −(α/(p+q))·(q/√|𝒯| + A_t)"""
    total = _require_duals(duals)

    def delta(member: np.ndarray) -> np.ndarray:
        size, _ = _set_stats(a_terms, member)
        if size == 0:
            return np.zeros_like(a_terms, dtype=float)
        return -(alpha / total) * (duals.q / math.sqrt(size) + a_terms)

    return delta


def solve_active_set(base: np.ndarray, wp: np.ndarray, rule: str = "fixed_point") -> ActiveSetResult:
    """
    活跃集：fixed_point 规则取 𝒯 = {base ≥ wp}（对偶 max 项在基础出价处打开的轮次），
    base_below_price 规则取 {base ≤ wp}

    𝒯 只由基础出价决定，扰动后出价跌破 wp 的轮次仍留在 𝒯 中并按 max(0, base + δ) 出价。
    """
    if rule not in ACTIVE_RULES:
        raise ValueError(f"未知活跃集规则: {rule}")
    base = np.asarray(base, dtype=float)
    wp = np.asarray(wp, dtype=float)
    member = base <= wp if rule == "base_below_price" else base >= wp
    return ActiveSetResult(frozenset(np.flatnonzero(member).tolist()), rule)


def active_set_ctr(
    duals: DualVars,
    C: float,
    ctr: Union[RateVector, ArrayLike],
    cvr: Union[RateVector, ArrayLike],
    wp: ArrayLike,
    eps_a: float = 0.0,
    rule: str = "fixed_point",
) -> ActiveSetResult:
    """CTR 鲁棒策略的活跃集；eps_a 不影响成员，只决定成员上的 δ"""
    if eps_a < 0:
        raise ValueError(f"eps_a 必须非负: {eps_a}")
    return solve_active_set(base_bids(duals, C, as_array(ctr), as_array(cvr)), np.asarray(wp, dtype=float), rule)


def _member(active: ActiveSetResult, size: int) -> np.ndarray:
    member = np.zeros(size, dtype=bool)
    member[active.mask] = True
    return member


def _decisions(
    base: np.ndarray,
    delta_all: np.ndarray,
    active: ActiveSetResult,
    extra_flags: Tuple[str, ...] = (),
) -> List[BidDecision]:
    member = _member(active, base.size)
    decisions = []
    for t in range(base.size):
        delta = float(delta_all[t]) if member[t] else 0.0
        bid = float(base[t]) + delta
        flags = list(extra_flags)
        if bid < 0:
            logger.debug(f"第 {t} 轮扰动项 {delta:.6g} 超过基础出价 {base[t]:.6g}，出价截断为 0")
            bid = 0.0
            flags.append("bid_clamped")
        decisions.append(BidDecision(t=t, bid=bid, delta=delta, active=bool(member[t]), flags=tuple(flags)))
    return decisions


def bids_robust_ctr(
    duals: DualVars,
    C: float,
    ctr_pred: Union[RateVector, ArrayLike],
    cvr: Union[RateVector, ArrayLike],
    wp: ArrayLike,
    eps_a: float,
    rule: str = "fixed_point",
) -> List[BidDecision]:
    """CTR 不确定下的鲁棒出价（仅活跃轮次施加扰动）"""
    if eps_a < 0:
        raise ValueError(f"eps_a 必须非负: {eps_a}")
    ctr_pred = as_array(ctr_pred)
    cvr = as_array(cvr)
    alpha = math.sqrt(2.0 * eps_a)
    base = base_bids(duals, C, ctr_pred, cvr)
    active = solve_active_set(base, np.asarray(wp, dtype=float), rule)
    perturbation = ctr_perturbation(duals, C, cvr, alpha)
    return _decisions(base, perturbation(_member(active, base.size)), active)


def bids_robust_cvr(
    duals: DualVars,
    C: float,
    ctr: Union[RateVector, ArrayLike],
    cvr_pred: Union[RateVector, ArrayLike],
    wp: ArrayLike,
    eps_b: float,
    rule: str = "fixed_point",
) -> List[BidDecision]:
    """CVR 不确定下的鲁棒出价"""
    if eps_b < 0:
        raise ValueError(f"eps_b 必须非负: {eps_b}")
    ctr = as_array(ctr)
    cvr_pred = as_array(cvr_pred)
    alpha = math.sqrt(2.0 * eps_b)
    base = base_bids(duals, C, ctr, cvr_pred)
    active = solve_active_set(base, np.asarray(wp, dtype=float), rule)
    perturbation = cvr_perturbation(duals, ctr, alpha)
    return _decisions(base, perturbation(_member(active, base.size)), active)


def joint_A_term(
    lambda_a: float,
    lambda_b: float,
    ctr: Union[float, ArrayLike],
    cvr: Union[float, ArrayLike],
    tol: float = Config.SINGULAR_TOL,
) -> Union[float, np.ndarray]:
    """
    A = (4K − 6·ctr·cvr)/(4L − 1) + 4(K − ctr·cvr)/(4L − 1)²，
    其中 K = λa·ctr² + λb·cvr²，L = λa·λb

    Raises:
        SingularDenominatorError: |4L − 1| < tol
    """
    denom = 4.0 * lambda_a * lambda_b - 1.0
    if abs(denom) < tol:
        raise SingularDenominatorError(f"4·λa·λb − 1 = {denom:.3g}，A 项奇异")
    a = np.asarray(ctr, dtype=float)
    b = np.asarray(cvr, dtype=float)
    k = lambda_a * a ** 2 + lambda_b * b ** 2
    ab = a * b
    value = (4.0 * k - 6.0 * ab) / denom + 4.0 * (k - ab) / denom ** 2
    if value.ndim == 0:
        return float(value)
    return value


def joint_penalty(x: float, lambda_a: float, lambda_b: float, ctr: ArrayLike, cvr: ArrayLike) -> np.ndarray:
    """f(x) = (2x²K − 2x³·ctr·cvr)/(4λaλb − x²)，A 项是它在 x = 1 处的导数"""
    a = np.asarray(ctr, dtype=float)
    b = np.asarray(cvr, dtype=float)
    k = lambda_a * a ** 2 + lambda_b * b ** 2
    return (2.0 * x ** 2 * k - 2.0 * x ** 3 * a * b) / (4.0 * lambda_a * lambda_b - x ** 2)


def check_joint_lambdas(duals: DualVars, margin: Optional[float] = None) -> None:
    """联合策略要求 λ 存在且 4·λa·λb ≥ 1 + margin"""
    if not duals.has_lambdas:
        raise ValueError("联合策略需要 λa、λb")
    margin = Config.JOINT_LAMBDA_MARGIN if margin is None else margin
    if 4.0 * duals.lambda_a * duals.lambda_b < 1.0 + margin - 1e-12:
        raise ValueError(
            f"λ 不满足 4·λa·λb ≥ 1 + {margin}: λa={duals.lambda_a}, λb={duals.lambda_b}"
        )


def bids_robust_joint(
    duals: DualVars,
    C: float,
    ctr_pred: Union[RateVector, ArrayLike],
    cvr_pred: Union[RateVector, ArrayLike],
    wp: ArrayLike,
    eps_a: float,
    eps_b: float,
    rule: str = "fixed_point",
    margin: Optional[float] = None,
) -> List[BidDecision]:
    """
    CTR 与 CVR 同时不确定时的鲁棒出价

    δ 的半径取 CTR 侧 α = √(2ε_a)。A < 0 时 δ 截断到 ≤ 0 并标记 negative_a_term。
    """
    if eps_a < 0 or eps_b < 0:
        raise ValueError(f"eps 必须非负: eps_a={eps_a}, eps_b={eps_b}")
    check_joint_lambdas(duals, margin)
    ctr_pred = as_array(ctr_pred)
    cvr_pred = as_array(cvr_pred)
    alpha = math.sqrt(2.0 * eps_a)
    logger.debug(f"联合出价半径: r_a={alpha:.6g}, r_b={math.sqrt(2.0 * eps_b):.6g}")

    a_terms = np.atleast_1d(joint_A_term(duals.lambda_a, duals.lambda_b, ctr_pred, cvr_pred))
    base = base_bids(duals, C, ctr_pred, cvr_pred)
    active = solve_active_set(base, np.asarray(wp, dtype=float), rule)
    member = _member(active, base.size)
    delta = np.minimum(joint_perturbation(duals, a_terms, alpha)(member), 0.0)
    extra: Tuple[str, ...] = ()
    if alpha > 0 and np.any(a_terms[member] < 0):
        logger.warning(f"{int(np.sum(a_terms[member] < 0))} 个活跃轮次 A < 0，δ 截断为 ≤ 0")
        extra = ("negative_a_term",)
    return _decisions(base, delta, active, extra)

"""
对偶变量拟合

所有策略在固定活跃集 𝒯 下的约化对偶都具有形式
    D(p, q) = B·p + Σ_t max(0, v_t − p·wp_t − q·h_t)
其中 h_t = wp_t − C·CTR_t，鲁棒策略只在 𝒯 上修改 v_t、h_t。
在 𝒯 与 (p, q) 之间交替：固定 𝒯 用 LP 求精确最优，再用新的 (p, q) 重新求活跃集。
联合策略另在每个 𝒯 上先解 λ 系统，再把 α·A_t(λ) 计入 v_t。
"""
import logging
import math
from dataclasses import dataclass, field
from typing import FrozenSet, Optional, Tuple

import numpy as np
from scipy.optimize import linprog

from config import Config
from src.bidding import policies
from src.bidding.optimizer import nelder_mead_multistart
from src.core.errors import EmptySampleError
from src.core.types import BidHistory, DualVars, Policy

logger = logging.getLogger(__name__)

Lambdas = Tuple[Optional[float], Optional[float]]


@dataclass
class FitResult:
    """对偶拟合结果"""
    duals: DualVars
    objective: float
    converged: bool
    reason: str
    active: FrozenSet[int] = frozenset()
    details: dict = field(default_factory=dict)

    @property
    def degenerate(self) -> bool:
        return self.duals.total < Config.MIN_DUAL_SUM


def _member(active: FrozenSet[int], size: int) -> np.ndarray:
    member = np.zeros(size, dtype=bool)
    if active:
        member[np.fromiter(active, dtype=int)] = True
    return member


def reduced_terms(
    history: BidHistory,
    C: float,
    policy: Policy,
    eps_a: float = 0.0,
    eps_b: float = 0.0,
    active: FrozenSet[int] = frozenset(),
    lambdas: Lambdas = (None, None),
) -> Tuple[np.ndarray, np.ndarray]:
    """
    固定活跃集下约化对偶的 (v_t, h_t)

    联合策略在 𝒯 上：v_t −= α·A_t(λa, λb)，h_t += α/√|𝒯|，α = √(2ε_a)。
    max 项恰在出价 base + δ^joint 处打开。
    """
    ctr, cvr, wp = history.ctr, history.cvr, history.wp
    member = _member(active, len(history))
    size = int(member.sum())

    v = ctr * cvr
    h = wp - C * ctr
    if size == 0:
        return v, h

    if policy is Policy.ROBUST_CTR and eps_a > 0:
        alpha = math.sqrt(2.0 * eps_a)
        norm = float(np.linalg.norm(cvr[member]))
        if norm > 0:
            v = np.where(member, v - alpha * cvr ** 2 / norm, v)
        h = np.where(member, h + C * alpha / math.sqrt(size), h)
    elif policy is Policy.ROBUST_CVR and eps_b > 0:
        alpha = math.sqrt(2.0 * eps_b)
        norm = float(np.linalg.norm(ctr[member]))
        if norm > 0:
            v = np.where(member, v - alpha * ctr ** 2 / norm, v)
    elif policy is Policy.ROBUST_JOINT and eps_a > 0:
        if lambdas[0] is None or lambdas[1] is None:
            raise ValueError("联合对偶需要 λa、λb")
        alpha = math.sqrt(2.0 * eps_a)
        a_terms = np.atleast_1d(policies.joint_A_term(lambdas[0], lambdas[1], ctr, cvr))
        v = np.where(member, v - alpha * a_terms, v)
        h = np.where(member, h + alpha / math.sqrt(size), h)
    return v, h


def evaluate_dual(B: float, wp: np.ndarray, v: np.ndarray, h: np.ndarray, p: float, q: float) -> float:
    """D(p, q) = B·p + Σ max(0, v − p·wp − q·h)"""
    return float(B * p + np.sum(np.maximum(0.0, v - p * wp - q * h)))


def dual_objective(
    history: BidHistory,
    B: float,
    C: float,
    p: float,
    q: float,
    policy: Policy = Policy.NON_ROBUST,
    eps_a: float = 0.0,
    eps_b: float = 0.0,
    active: FrozenSet[int] = frozenset(),
    lambdas: Lambdas = (None, None),
) -> float:
    """给定活跃集（联合策略另给 λ）时任意 (p, q) 处的约化对偶目标"""
    v, h = reduced_terms(history, C, policy, eps_a, eps_b, active, lambdas)
    return evaluate_dual(B, history.wp, v, h, p, q)


def _solve_lp(B: float, wp: np.ndarray, v: np.ndarray, h: np.ndarray) -> Tuple[float, float, int]:
    """变量 [p, q, s_1..s_T]：min B·p + Σ s，s.t. s_t ≥ v_t − p·wp_t − q·h_t"""
    n = wp.size
    c = np.concatenate(([B, 0.0], np.ones(n)))
    a_ub = np.hstack((-wp[:, None], -h[:, None], -np.eye(n)))
    res = linprog(c, A_ub=a_ub, b_ub=-v, bounds=[(0, None)] * (n + 2), method="highs")
    if res.status != 0:
        return math.nan, math.nan, int(res.status)
    p, q = float(max(res.x[0], 0.0)), float(max(res.x[1], 0.0))
    return p, q, 0


def _solve_fixed_set(
    B: float,
    wp: np.ndarray,
    v: np.ndarray,
    h: np.ndarray,
    method: str,
    start: Optional[DualVars],
    multi_starts: int,
) -> Tuple[float, float, bool]:
    if method == "lp":
        p, q, status = _solve_lp(B, wp, v, h)
        if status == 0:
            return p, q, True
        logger.warning(f"LP 求解失败（status={status}），回退到 Nelder-Mead")

    x0 = None if start is None else [start.p, start.q]
    outcome = nelder_mead_multistart(
        lambda x: evaluate_dual(B, wp, v, h, x[0], x[1]),
        x0, dim=2, lower=[0.0, 0.0], upper=[Config.DUAL_UPPER_BOUND] * 2,
        n_starts=multi_starts,
    )
    return float(outcome.x[0]), float(outcome.x[1]), outcome.converged


def _active_for(history: BidHistory, C: float, duals: DualVars, rule: str) -> FrozenSet[int]:
    """在 (p, q) 处求活跃集；p + q 退化时取所有正价值轮次"""
    if duals.total < Config.MIN_DUAL_SUM:
        return frozenset(np.flatnonzero(history.values > 0).tolist())
    base = policies.base_bids(duals, C, history.ctr, history.cvr)
    return policies.solve_active_set(base, history.wp, rule).indices


def _check_inputs(history: BidHistory, B: float, C: float) -> None:
    if len(history) == 0:
        raise EmptySampleError("历史为空，无法拟合对偶变量")
    if B < 0 or C < 0:
        raise ValueError(f"预算与 CPC 上限必须非负: B={B}, C={C}")


def fit_duals_nonrobust(
    history: BidHistory,
    B: float,
    C: float,
    method: str = "lp",
    warm_start: Optional[DualVars] = None,
    multi_starts: int = Config.DUAL_MULTI_STARTS,
) -> FitResult:
    """非鲁棒对偶：min B·p + Σ max(0, v_t − p·wp_t − q·(wp_t − C·CTR_t))"""
    _check_inputs(history, B, C)
    v, h = reduced_terms(history, C, Policy.NON_ROBUST)
    p, q, ok = _solve_fixed_set(B, history.wp, v, h, method, warm_start, multi_starts)
    objective = evaluate_dual(B, history.wp, v, h, p, q)
    duals = DualVars(p=p, q=q)
    active = frozenset(np.flatnonzero(v - p * history.wp - q * h > 0).tolist())
    return FitResult(
        duals=duals, objective=objective, converged=ok,
        reason="ok" if ok else "optimizer_not_converged",
        active=active, details={"method": method},
    )


def _fit_alternating(
    history: BidHistory,
    B: float,
    C: float,
    policy: Policy,
    eps_a: float,
    eps_b: float,
    method: str,
    warm_start: Optional[DualVars],
    multi_starts: int,
    max_alternations: int,
    rule: str,
) -> FitResult:
    _check_inputs(history, B, C)
    if warm_start is not None and warm_start.total >= Config.MIN_DUAL_SUM:
        start = DualVars(warm_start.p, warm_start.q, warm_start.lambda_a, warm_start.lambda_b)
    else:
        start = fit_duals_nonrobust(history, B, C, method=method, multi_starts=multi_starts).duals
    lambdas: Lambdas = _initial_lambdas(start) if policy is Policy.ROBUST_JOINT else (None, None)
    duals = DualVars(start.p, start.q, *lambdas)
    active = _active_for(history, C, duals, rule)

    best: Optional[FitResult] = None
    converged = False
    iterations = 0
    for iterations in range(1, max_alternations + 1):
        details = {"method": method}
        if policy is Policy.ROBUST_JOINT:
            # λ 系统只依赖 𝒯，先定 λ 再在该 λ 的 A 项下解 (p, q)
            lam_a, lam_b, certificate = fit_lambdas(history, active, eps_a, eps_b, start=lambdas)
            lambdas = (lam_a, lam_b)
            details["certificate"] = certificate
        v, h = reduced_terms(history, C, policy, eps_a, eps_b, active, lambdas)
        p, q, ok = _solve_fixed_set(B, history.wp, v, h, method, duals, multi_starts)
        objective = evaluate_dual(B, history.wp, v, h, p, q)
        duals = DualVars(p, q, *lambdas)
        candidate = FitResult(
            duals=duals, objective=objective, converged=ok,
            reason="ok" if ok else "optimizer_not_converged",
            active=active, details=details,
        )
        if best is None or objective < best.objective - 1e-12:
            best = candidate

        new_active = _active_for(history, C, duals, rule)
        if new_active == active:
            converged = ok
            break
        active = new_active

    best.details["alternations"] = iterations
    if not converged:
        logger.warning(f"{policy.value} 对偶拟合在 {max_alternations} 轮交替内活跃集未稳定")
        best.converged = False
        best.reason = "active_set_not_stable"
    return best


def fit_duals_robust_ctr(
    history: BidHistory,
    B: float,
    C: float,
    eps_a: float,
    method: str = "lp",
    warm_start: Optional[DualVars] = None,
    multi_starts: int = Config.DUAL_MULTI_STARTS,
    max_alternations: int = Config.MAX_ALTERNATIONS,
    rule: str = "fixed_point",
) -> FitResult:
    """CTR 鲁棒对偶：𝒯 上 v_t −= α·CVR_t²/‖CVR_𝒯‖，h_t += C·α/√|𝒯|"""
    return _fit_alternating(history, B, C, Policy.ROBUST_CTR, eps_a, 0.0, method,
                            warm_start, multi_starts, max_alternations, rule)


def fit_duals_robust_cvr(
    history: BidHistory,
    B: float,
    C: float,
    eps_b: float,
    method: str = "lp",
    warm_start: Optional[DualVars] = None,
    multi_starts: int = Config.DUAL_MULTI_STARTS,
    max_alternations: int = Config.MAX_ALTERNATIONS,
    rule: str = "fixed_point",
) -> FitResult:
    """CVR 鲁棒对偶：𝒯 上 v_t −= α′·CTR_t²/‖CTR_𝒯‖，CPC 项不变"""
    return _fit_alternating(history, B, C, Policy.ROBUST_CVR, 0.0, eps_b, method,
                            warm_start, multi_starts, max_alternations, rule)


def fit_duals_joint(
    history: BidHistory,
    B: float,
    C: float,
    eps_a: float,
    eps_b: float,
    method: str = "lp",
    warm_start: Optional[DualVars] = None,
    multi_starts: int = Config.DUAL_MULTI_STARTS,
    max_alternations: int = Config.MAX_ALTERNATIONS,
    rule: str = "fixed_point",
) -> FitResult:
    """
    联合鲁棒对偶：𝒯 上 v_t −= α·A_t(λa, λb)，h_t += α/√|𝒯|

    每个 𝒯 上 (λa, λb) 取 S-lemma 下界证书的最大点（即 λ 系统的解），
    再在该 λ 下用 LP 求 (p, q)；随后用新的 (p, q) 更新 𝒯，直到 𝒯 不变。
    """
    return _fit_alternating(history, B, C, Policy.ROBUST_JOINT, eps_a, eps_b, method,
                            warm_start, multi_starts, max_alternations, rule)


def _initial_lambdas(start: DualVars) -> Tuple[float, float]:
    if start.has_lambdas:
        return float(start.lambda_a), float(start.lambda_b)
    level = math.sqrt((1.0 + Config.JOINT_LAMBDA_MARGIN) / 4.0) * 2.0
    return level, level


def _project_lambdas(lam_a: float, lam_b: float, margin: float) -> Tuple[float, float]:
    """把 (λa, λb) 等比放大到 4·λa·λb ≥ 1 + margin"""
    product = 4.0 * lam_a * lam_b
    if product < 1.0 + margin:
        scale = math.sqrt((1.0 + margin) / product) * (1.0 + 1e-12)
        lam_a, lam_b = lam_a * scale, lam_b * scale
    return lam_a, lam_b


def lambda_certificate(
    history: BidHistory,
    active: FrozenSet[int],
    lambda_a: float,
    lambda_b: float,
    eps_a: float,
    eps_b: float,
) -> float:
    """
    𝒯 上最坏情况价值 min Σ_𝒯 a_t·b_t 的 S-lemma 下界：
    Σ a⁰b⁰ − λa·r_a² − λb·r_b² − ½·Σ f_t(1)
    """
    member = _member(active, len(history))
    ctr, cvr = history.ctr[member], history.cvr[member]
    penalty = policies.joint_penalty(1.0, lambda_a, lambda_b, ctr, cvr)
    return float(np.sum(ctr * cvr) - lambda_a * 2.0 * eps_a - lambda_b * 2.0 * eps_b - 0.5 * np.sum(penalty))


def fit_lambdas(
    history: BidHistory,
    active: FrozenSet[int],
    eps_a: float,
    eps_b: float,
    start: Tuple[Optional[float], Optional[float]] = (None, None),
    margin: float = Config.JOINT_LAMBDA_MARGIN,
    cap: float = Config.JOINT_LAMBDA_CAP,
) -> Tuple[float, float, float]:
    """在 4·λa·λb ≥ 1 + margin 上最大化下界证书，返回 (λa, λb, 证书值)"""
    lo, hi = math.log(1e-6), math.log(cap)

    def to_lambdas(x: np.ndarray) -> Tuple[float, float]:
        lam_a, lam_b = _project_lambdas(math.exp(x[0]), math.exp(x[1]), margin)
        return min(lam_a, cap), min(lam_b, cap)

    def negative_certificate(x: np.ndarray) -> float:
        lam_a, lam_b = to_lambdas(x)
        return -lambda_certificate(history, active, lam_a, lam_b, eps_a, eps_b)

    x0 = None
    if start[0] is not None and start[1] is not None:
        x0 = [math.log(max(start[0], 1e-6)), math.log(max(start[1], 1e-6))]
    grid = [[0.0, 0.0], [math.log(10.0)] * 2, [math.log(100.0)] * 2]
    outcome = nelder_mead_multistart(negative_certificate, x0, dim=2, lower=[lo, lo], upper=[hi, hi],
                                     n_starts=0, grid=grid)
    lam_a, lam_b = to_lambdas(outcome.x)
    return lam_a, lam_b, -outcome.fun


def fit_duals(
    policy: Policy,
    history: BidHistory,
    B: float,
    C: float,
    eps_a: float = 0.0,
    eps_b: float = 0.0,
    **kwargs,
) -> FitResult:
    """按策略分派对偶拟合；RiskBid 沿用非鲁棒对偶"""
    if policy in (Policy.NON_ROBUST, Policy.RISK):
        kwargs.pop("max_alternations", None)
        kwargs.pop("rule", None)
        return fit_duals_nonrobust(history, B, C, **kwargs)
    if policy is Policy.ROBUST_CTR:
        return fit_duals_robust_ctr(history, B, C, eps_a, **kwargs)
    if policy is Policy.ROBUST_CVR:
        return fit_duals_robust_cvr(history, B, C, eps_b, **kwargs)
    return fit_duals_joint(history, B, C, eps_a, eps_b, **kwargs)

"""
独立校验器：数值球约束最小化、小规模穷举原问题、Schur 补 PSD 检查

只依赖 numpy 与核心类型，不调用出价或不确定集模块的解析公式。
"""
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from src.core.errors import OracleLimitError
from src.core.types import BidHistory, Policy

logger = logging.getLogger(__name__)

MAX_T_SINGLE = 12
MAX_T_JOINT = 8
PSD_TOL = 1e-10


@dataclass
class BallMinimizerResult:
    """球约束线性最小化结果"""
    argmin: np.ndarray
    objective: float
    converged: bool
    iterations: int


@dataclass
class AlternatingResult:
    """联合内层问题的交替最小化结果"""
    objective: float
    a: np.ndarray
    b: np.ndarray
    trace: List[float] = field(default_factory=list)  # 最优重启的逐步目标值


@dataclass
class PrimalResult:
    """穷举原问题的最优可行分配"""
    value: float
    allocation: np.ndarray
    n_feasible: int


def _project_ball(point: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    offset = point - center
    dist = float(np.linalg.norm(offset))
    if dist <= radius:
        return point
    return center + offset * (radius / dist)


def numeric_ball_minimizer(
    rate_pred,
    weights_m,
    epsilon: float,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> BallMinimizerResult:
    """投影梯度法最小化 mᵀa，约束 ½‖a − â‖² ≤ ε"""
    if tol <= 0:
        raise ValueError(f"tol 必须为正: {tol}")
    center = np.asarray(rate_pred, dtype=float).reshape(-1)
    m = np.asarray(weights_m, dtype=float).reshape(-1)
    radius = math.sqrt(2.0 * max(epsilon, 0.0))
    grad_norm = float(np.linalg.norm(m))
    if radius == 0.0 or grad_norm == 0.0:
        return BallMinimizerResult(center.copy(), float(m @ center), True, 0)

    step = radius / grad_norm
    a = center.copy()
    for iteration in range(1, max_iter + 1):
        nxt = _project_ball(a - step * m, center, radius)
        gap = float(np.linalg.norm(nxt - a)) / step
        a = nxt
        if gap <= tol:
            return BallMinimizerResult(a, float(m @ a), True, iteration)
    logger.warning(f"投影梯度在 {max_iter} 次迭代内未达到平稳性 {tol}")
    return BallMinimizerResult(a, float(m @ a), False, max_iter)


def _ball_step(center: np.ndarray, weights: np.ndarray, radius: float) -> np.ndarray:
    """线性目标在球上的极小点（权重可为负）"""
    norm = float(np.linalg.norm(weights))
    if norm == 0.0 or radius == 0.0:
        return center.copy()
    return center - radius * weights / norm


def joint_inner_minimum(
    ctr: np.ndarray,
    cvr: np.ndarray,
    x: np.ndarray,
    eps_a: float,
    eps_b: float,
    restarts: int = 5,
    alternations: int = 200,
    seed: int = 0,
) -> AlternatingResult:
    """
    交替最小化 Σ x·a·b，a、b 分别在各自的 ε 球内

    第一次重启从名义 CVR 出发，其余从 CVR 球面上的随机点出发。
    """
    ctr = np.asarray(ctr, dtype=float)
    cvr = np.asarray(cvr, dtype=float)
    x = np.asarray(x, dtype=float)
    ra, rb = math.sqrt(2.0 * eps_a), math.sqrt(2.0 * eps_b)
    rng = np.random.default_rng(seed)
    best: Optional[AlternatingResult] = None

    for restart in range(max(restarts, 1)):
        if restart == 0 or rb == 0.0:
            b = cvr.copy()
        else:
            direction = rng.standard_normal(cvr.size)
            b = cvr + rb * direction / max(float(np.linalg.norm(direction)), 1e-300)
        a = ctr.copy()
        trace = [float(np.sum(x * a * b))]
        for _ in range(alternations):
            a = _ball_step(ctr, x * b, ra)
            b = _ball_step(cvr, x * a, rb)
            value = float(np.sum(x * a * b))
            trace.append(value)
            if trace[-2] - value <= 1e-15:
                break
        if best is None or trace[-1] < best.objective:
            best = AlternatingResult(objective=trace[-1], a=a, b=b, trace=trace)
    return best


def _mode(robust_mode: Union[str, Policy]) -> str:
    if isinstance(robust_mode, Policy):
        return {
            Policy.NON_ROBUST: "none", Policy.RISK: "none", Policy.ROBUST_CTR: "ctr",
            Policy.ROBUST_CVR: "cvr", Policy.ROBUST_JOINT: "joint",
        }[robust_mode]
    if robust_mode not in ("none", "ctr", "cvr", "joint"):
        raise ValueError(f"未知鲁棒模式: {robust_mode}")
    return robust_mode


def brute_force_primal(
    history: BidHistory,
    B: float,
    C: float,
    robust_mode: Union[str, Policy] = "none",
    eps_a: float = 0.0,
    eps_b: float = 0.0,
    restarts: int = 5,
    alternations: int = 200,
    seed: int = 0,
) -> PrimalResult:
    """
    枚举全部 2^T 个 0/1 分配，检查预算与（最坏情况）CPC 约束，返回最优可行目标

    Raises:
        OracleLimitError: T 超过 12（联合模式超过 8）
    """
    mode = _mode(robust_mode)
    size = len(history)
    limit = MAX_T_JOINT if mode == "joint" else MAX_T_SINGLE
    if size > limit:
        raise OracleLimitError(f"T={size} 超过穷举上限 {limit}")

    ctr, cvr, wp = history.ctr, history.cvr, history.wp
    allocations = np.array(list(itertools.product((0.0, 1.0), repeat=size)), dtype=float).reshape(-1, size)
    spend = allocations @ wp
    budget_ok = spend <= B + 1e-12

    best_value, best_x, n_feasible = -math.inf, np.zeros(size), 0
    for x, cost, ok in zip(allocations, spend, budget_ok):
        if not ok:
            continue
        # CPC：花费 ≤ C × 最坏情况点击
        if mode in ("ctr", "joint"):
            clicks = numeric_ball_minimizer(ctr, x, eps_a).objective
        else:
            clicks = float(x @ ctr)
        if cost > C * clicks + 1e-12:
            continue

        if mode == "none":
            value = float(np.sum(x * ctr * cvr))
        elif mode == "ctr":
            value = numeric_ball_minimizer(ctr, x * cvr, eps_a).objective
        elif mode == "cvr":
            value = numeric_ball_minimizer(cvr, x * ctr, eps_b).objective
        else:
            value = joint_inner_minimum(ctr, cvr, x, eps_a, eps_b, restarts, alternations, seed).objective

        n_feasible += 1
        if value > best_value:
            best_value, best_x = value, x.copy()

    return PrimalResult(value=best_value, allocation=best_x, n_feasible=n_feasible)


def quadratic_gap(x: float, lambda_a: float, lambda_b: float, ctr, cvr) -> np.ndarray:
    """
    2·(x·a·b − min_{u,v} φ)，φ(u, v) = x(a+u)(b+v) + λa·u² + λb·v²

    通过求解 2×2 平稳方程得到，要求 4λaλb > x²。
    """
    a = np.atleast_1d(np.asarray(ctr, dtype=float))
    b = np.atleast_1d(np.asarray(cvr, dtype=float))
    hessian = np.array([[2.0 * lambda_a, x], [x, 2.0 * lambda_b]])
    out = np.empty(a.size)
    for k in range(a.size):
        rhs = -np.array([x * b[k], x * a[k]])
        u, v = np.linalg.solve(hessian, rhs)
        phi = x * (a[k] + u) * (b[k] + v) + lambda_a * u ** 2 + lambda_b * v ** 2
        out[k] = 2.0 * (x * a[k] * b[k] - phi)
    return out


def schur_condition(lambda_a: float, lambda_b: float, x) -> bool:
    """标量条件 λa ≥ 0、λb ≥ 0 且 λa·λb ≥ ¼·max x²"""
    x = np.asarray(x, dtype=float)
    peak = float(np.max(x ** 2)) if x.size else 0.0
    return lambda_a >= 0 and lambda_b >= 0 and lambda_a * lambda_b >= 0.25 * peak


def psd_check(lambda_a: float, lambda_b: float, x) -> bool:
    """构造 [[λa·I, ½D], [½D, λb·I]]（D = diag(x)），判断最小特征值 ≥ −1e-10"""
    x = np.asarray(x, dtype=float).reshape(-1)
    size = x.size
    if size > 50:
        raise OracleLimitError(f"T={size} 超过 PSD 检查上限 50")
    half = 0.5 * np.diag(x)
    matrix = np.block([
        [lambda_a * np.eye(size), half],
        [half, lambda_b * np.eye(size)],
    ])
    return bool(np.linalg.eigvalsh(matrix).min() >= -PSD_TOL)

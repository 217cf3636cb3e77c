"""
低维无导数搜索：Nelder-Mead 多起点 + 坐标细化
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from config import Config

logger = logging.getLogger(__name__)


@dataclass
class SearchOutcome:
    """搜索结果"""
    x: np.ndarray
    fun: float
    converged: bool
    evaluations: int
    details: dict = field(default_factory=dict)


def log_grid_starts(dim: int, n_starts: int, low: float = 1e-3, high: float = 1e1) -> List[np.ndarray]:
    """对角线上的对数等距起点"""
    if n_starts <= 0:
        return []
    levels = np.logspace(np.log10(low), np.log10(high), n_starts)
    return [np.full(dim, level) for level in levels]


def coordinate_refine(
    fun: Callable[[np.ndarray], float],
    x: np.ndarray,
    fx: float,
    lower: np.ndarray,
    upper: np.ndarray,
    span: float = 0.5,
    tol: float = Config.OPTIMIZER_TOL,
    sweeps: int = 3,
):
    """逐坐标有界一维搜索，只接受改进"""
    x = np.array(x, dtype=float)
    evaluations = 0
    for _ in range(sweeps):
        improved = False
        for i in range(x.size):
            lo = max(lower[i], x[i] - span * max(abs(x[i]), 1.0))
            hi = min(upper[i], x[i] + span * max(abs(x[i]), 1.0))
            if hi <= lo:
                continue

            def line(value, i=i):
                trial = x.copy()
                trial[i] = value
                return fun(trial)

            res = minimize_scalar(line, bounds=(lo, hi), method="bounded", options={"xatol": tol})
            evaluations += int(res.nfev)
            if res.fun < fx - tol:
                x[i] = res.x
                fx = float(res.fun)
                improved = True
        if not improved:
            break
    return x, fx, evaluations


def nelder_mead_multistart(
    fun: Callable[[np.ndarray], float],
    x0: Optional[Sequence[float]],
    dim: int,
    lower: Sequence[float],
    upper: Sequence[float],
    n_starts: int = Config.DUAL_MULTI_STARTS,
    tol: float = Config.OPTIMIZER_TOL,
    max_iter: int = 2000,
    grid: Optional[Sequence[Sequence[float]]] = None,
) -> SearchOutcome:
    """
    在盒约束内最小化 fun：暖启动点 + 对数网格起点各跑一次 Nelder-Mead，
    取最优后做坐标细化。盒约束通过裁剪实现。
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)

    def clipped(x: np.ndarray) -> float:
        return float(fun(np.clip(x, lower, upper)))

    starts: List[np.ndarray] = []
    if x0 is not None:
        starts.append(np.clip(np.asarray(x0, dtype=float), lower, upper))
    if grid is not None:
        starts.extend(np.clip(np.asarray(g, dtype=float), lower, upper) for g in grid)
    else:
        starts.extend(np.clip(s, lower, upper) for s in log_grid_starts(dim, n_starts))
    if not starts:
        starts.append(np.clip(np.ones(dim), lower, upper))

    best_x, best_f = None, np.inf
    converged = False
    evaluations = 0
    for start in starts:
        res = minimize(
            clipped, start, method="Nelder-Mead",
            options={"xatol": tol, "fatol": tol, "maxiter": max_iter, "adaptive": dim > 2},
        )
        evaluations += int(res.nfev)
        if res.fun < best_f:
            best_x, best_f = np.clip(res.x, lower, upper), float(res.fun)
            converged = bool(res.success)

    best_x, best_f, extra = coordinate_refine(clipped, best_x, best_f, lower, upper, tol=tol)
    evaluations += extra
    if not converged:
        logger.warning(f"Nelder-Mead 未在 {max_iter} 次迭代内收敛，使用最优迭代点 f={best_f:.6g}")
    return SearchOutcome(x=best_x, fun=best_f, converged=converged, evaluations=evaluations,
                         details={"n_starts": len(starts)})

"""
校验套件：解析实现 vs 独立校验器的交叉检查
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from config import Config
from src.bidding import duals as dual_fit
from src.bidding import policies
from src.core.types import BidHistory, Campaign, DualVars, Policy, SweepResult
from src.market.datasets import DatasetSpec, generate_synthetic
from src.market.simulator import SimulationConfig, run_simulation
from src.metrics.metrics import aggregate, cpc_avg, tcv
from src.oracle import oracle
from src.uncertainty.sets import UncertaintyBudget, calibrate_epsilon, worst_case_rates

logger = logging.getLogger(__name__)

SUITES = ("worst_case", "duality", "consistency", "psd", "metrics")


@dataclass
class CheckOutcome:
    """单项检查结果"""
    name: str
    passed: bool
    n: int
    failures: int = 0
    detail: str = ""


@dataclass
class VerifyReport:
    """套件报告"""
    suite: str
    checks: List[CheckOutcome] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _log_uniform(rng: np.random.Generator, low: float = Config.EPS_MIN, high: float = Config.EPS_MAX) -> float:
    return float(math.exp(rng.uniform(math.log(low), math.log(high))))


def random_history(rng: np.random.Generator, size: int) -> BidHistory:
    return BidHistory(
        ctr=rng.uniform(0.05, 0.5, size),
        cvr=rng.uniform(0.05, 0.5, size),
        wp=rng.uniform(0.01, 0.3, size),
    )


def check_worst_case(rng: np.random.Generator, n: int) -> List[CheckOutcome]:
    failures, boundary_failures, worst_gap = 0, 0, 0.0
    for _ in range(n):
        size = int(rng.integers(5, 21))
        pred = rng.uniform(0.2, 0.8, size)
        m = rng.uniform(0.0, 1.0, size)
        budget = UncertaintyBudget(_log_uniform(rng))
        analytic = worst_case_rates(pred, m, budget)
        numeric = oracle.numeric_ball_minimizer(pred, m, budget.epsilon)
        gap = abs(m @ analytic - numeric.objective) / max(abs(numeric.objective), 1e-12)
        worst_gap = max(worst_gap, gap)
        failures += gap > 1e-6
        boundary_failures += abs(0.5 * np.sum((analytic - pred) ** 2) - budget.epsilon) > 1e-12
    return [
        CheckOutcome("analytic_vs_numeric", failures == 0, n, failures, f"最大相对误差 {worst_gap:.2e}"),
        CheckOutcome("on_ball_boundary", boundary_failures == 0, n, boundary_failures),
    ]


def check_calibration(rng: np.random.Generator, trials: int, q: float = 0.9, n_advertisers: int = 10) -> CheckOutcome:
    coverage = []
    for _ in range(trials):
        losses = rng.exponential(1.0, 100)
        eps = calibrate_epsilon(losses, q, n_advertisers).epsilon
        fresh = rng.exponential(1.0, 1000)
        coverage.append(float(np.mean(fresh <= eps)))
    mean = float(np.mean(coverage))
    return CheckOutcome("calibration_coverage", mean >= q - 0.02, trials, detail=f"平均覆盖率 {mean:.4f}")


def check_duality(rng: np.random.Generator, n: int) -> List[CheckOutcome]:
    outcomes = []
    for policy in (Policy.NON_ROBUST, Policy.ROBUST_CTR, Policy.ROBUST_CVR, Policy.ROBUST_JOINT):
        failures, worst_slack = 0, math.inf
        for _ in range(n):
            size = int(rng.integers(3, 7 if policy is Policy.ROBUST_JOINT else 9))
            history = random_history(rng, size)
            B = float(rng.uniform(0.2, 1.0) * history.wp.sum())
            # 联合对偶的 CPC 锥项不含 C，C ≥ 1 时才被原问题的 C·r_a·‖x‖ 覆盖
            C = float(rng.uniform(1.0 if policy is Policy.ROBUST_JOINT else 0.5, 3.0))
            eps_a, eps_b = _log_uniform(rng), _log_uniform(rng)
            fit = dual_fit.fit_duals(policy, history, B, C, eps_a=eps_a, eps_b=eps_b)
            primal = oracle.brute_force_primal(history, B, C, policy, eps_a, eps_b)
            slack = fit.objective - primal.value
            worst_slack = min(worst_slack, slack)
            failures += slack < -1e-6
        outcomes.append(CheckOutcome(f"weak_duality_{policy.value}", failures == 0, n, failures,
                                     f"最小松弛 {worst_slack:.3e}"))
    return outcomes


def check_consistency(rng: np.random.Generator, n: int) -> List[CheckOutcome]:
    bid_failures, dual_failures = 0, 0
    for _ in range(n):
        size = int(rng.integers(3, 15))
        ctr, cvr = rng.uniform(0.01, 0.9, size), rng.uniform(0.01, 0.9, size)
        wp = rng.uniform(0.0, 0.5, size)
        C = float(rng.uniform(0.5, 3.0))
        lam = float(rng.uniform(0.6, 3.0))
        duals = DualVars(float(rng.uniform(0.1, 2.0)), float(rng.uniform(0.0, 2.0)), lam, lam)
        base = policies.base_bids(duals, C, ctr, cvr)
        for decisions in (
            policies.bids_robust_ctr(duals, C, ctr, cvr, wp, 0.0),
            policies.bids_robust_cvr(duals, C, ctr, cvr, wp, 0.0),
            policies.bids_robust_joint(duals, C, ctr, cvr, wp, 0.0, 0.0),
        ):
            bids = np.array([d.bid for d in decisions])
            bid_failures += bool(np.max(np.abs(bids - base)) > 1e-9)

        history = BidHistory(ctr=ctr, cvr=cvr, wp=wp)
        B = float(rng.uniform(0.2, 1.0) * max(wp.sum(), 1e-3))
        reference = dual_fit.fit_duals_nonrobust(history, B, C).objective
        for fitter in (
            lambda: dual_fit.fit_duals_robust_ctr(history, B, C, 0.0),
            lambda: dual_fit.fit_duals_robust_cvr(history, B, C, 0.0),
            lambda: dual_fit.fit_duals_joint(history, B, C, 0.0, 0.0),
        ):
            dual_failures += abs(fitter().objective - reference) > 1e-6

    a_failures = 0
    for _ in range(200):
        lam_a, lam_b = float(rng.uniform(0.3, 3.0)), float(rng.uniform(0.3, 3.0))
        if 4.0 * lam_a * lam_b < 1.5:
            lam_b = 1.5 / (4.0 * lam_a)
        a, b = float(rng.uniform(0.05, 1.0)), float(rng.uniform(0.05, 1.0))
        analytic = policies.joint_A_term(lam_a, lam_b, a, b)
        numeric = five_point_derivative(lambda x: oracle.quadratic_gap(x, lam_a, lam_b, a, b)[0], 1.0)
        a_failures += abs(analytic - numeric) > 1e-8 * max(abs(analytic), 1e-6)

    return [
        CheckOutcome("eps_zero_bids", bid_failures == 0, 3 * n, bid_failures),
        CheckOutcome("eps_zero_duals", dual_failures == 0, 3 * n, dual_failures),
        CheckOutcome("a_term_derivative", a_failures == 0, 200, a_failures),
    ]


def five_point_derivative(fun: Callable[[float], float], x: float, h: float = 1e-3) -> float:
    return (-fun(x + 2 * h) + 8 * fun(x + h) - 8 * fun(x - h) + fun(x - 2 * h)) / (12 * h)


def check_psd(rng: np.random.Generator, n: int) -> List[CheckOutcome]:
    disagreements = 0
    for _ in range(n):
        size = int(rng.integers(1, 11))
        lam_a, lam_b = float(rng.uniform(0.0, 1.0)), float(rng.uniform(0.0, 1.0))
        x = rng.uniform(0.0, 1.0, size)
        disagreements += oracle.psd_check(lam_a, lam_b, x) != oracle.schur_condition(lam_a, lam_b, x)
    return [CheckOutcome("psd_equivalence", disagreements == 0, n, disagreements)]


def check_metrics(rng: np.random.Generator, n: int) -> List[CheckOutcome]:
    failures = 0
    for k in range(n):
        seed = int(rng.integers(0, 2 ** 31))
        spec = DatasetSpec(horizon=12, n_advertisers=3, n_competitors=1)
        campaigns = [Campaign(id=i, budget=0.3, cpc_cap=1.0) for i in range(3)]
        run = run_simulation(SimulationConfig(horizon=12, campaigns=campaigns, seed=seed, warmup_rounds=2),
                             generate_synthetic(spec, seed))
        state, rounds = run.state, run.rounds
        failures += abs(tcv(state, rounds) - float(state.expected_conversions.sum())) > 1e-12
        clicks = float(state.expected_clicks.sum())
        paid = float(np.sum(state.win_matrix() * state.bid_matrix()))
        expected_cpc = None if clicks == 0 else paid / clicks
        actual_cpc = cpc_avg(state, rounds)
        if expected_cpc is None:
            failures += actual_cpc is not None
        else:
            failures += actual_cpc is None or abs(actual_cpc - expected_cpc) > 1e-12
        failures += bool(np.any(state.spend > state.initial_budget + 1e-12))

    summary = aggregate([
        SweepResult(Policy.NON_ROBUST, 1e-3, 1e-3, 0, 1.0, 1.0),
        SweepResult(Policy.NON_ROBUST, 1e-3, 1e-3, 1, 3.0, 1.0),
    ])
    std_ok = abs(float(summary["std_tcv"].iloc[0]) - math.sqrt(2.0)) < 1e-12
    return [
        CheckOutcome("recompute_from_win_log", failures == 0, n, failures),
        CheckOutcome("sample_std", std_ok, 1, int(not std_ok)),
    ]


DEFAULT_SIZES: Dict[str, int] = {
    "worst_case": 100,
    "duality": 50,
    "consistency": 50,
    "psd": 1000,
    "metrics": 5,
}


def verify(suite: str, n_instances: Optional[int] = None, seed: int = 0) -> VerifyReport:
    """
    运行指定校验套件

    Raises:
        ValueError: 未知套件
    """
    if suite not in SUITES:
        raise ValueError(f"未知校验套件: {suite}（可选: {', '.join(SUITES)}）")
    rng = np.random.default_rng(seed)
    n = DEFAULT_SIZES[suite] if n_instances is None else n_instances
    logger.info(f"运行校验套件 {suite}，实例数 {n}")
    if suite == "worst_case":
        checks = check_worst_case(rng, n) + [check_calibration(rng, 1000)]
    elif suite == "duality":
        checks = check_duality(rng, n)
    elif suite == "consistency":
        checks = check_consistency(rng, n)
    elif suite == "psd":
        checks = check_psd(rng, n)
    else:
        checks = check_metrics(rng, n)
    report = VerifyReport(suite=suite, checks=checks)
    for check in checks:
        if not check.passed:
            logger.warning(f"[{suite}] {check.name} 未通过: {check.failures}/{check.n} {check.detail}")
    return report

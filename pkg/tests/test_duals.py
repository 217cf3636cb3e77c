import numpy as np
import pytest

from src.bidding.duals import (
    dual_objective,
    fit_duals,
    fit_duals_joint,
    fit_duals_nonrobust,
    fit_duals_robust_ctr,
    fit_duals_robust_cvr,
    fit_lambdas,
    lambda_certificate,
    reduced_terms,
)
from src.bidding.optimizer import nelder_mead_multistart
from src.bidding.policies import joint_A_term
from src.core.errors import EmptySampleError
from src.core.types import BidHistory, Policy
from src.oracle.oracle import brute_force_primal


def grid_minimum(history, B, C, policy=Policy.NON_ROBUST, eps_a=0.0, eps_b=0.0, active=frozenset()):
    """在 (p, q) 网格上逐级加密求对偶最小值"""
    lo_p, hi_p, lo_q, hi_q = 0.0, 5.0, 0.0, 5.0
    best = np.inf
    for _ in range(6):
        ps, qs = np.linspace(lo_p, hi_p, 41), np.linspace(lo_q, hi_q, 41)
        values = np.array([[dual_objective(history, B, C, p, q, policy, eps_a, eps_b, active) for q in qs]
                           for p in ps])
        i, j = np.unravel_index(np.argmin(values), values.shape)
        best = min(best, values[i, j])
        step_p, step_q = (hi_p - lo_p) / 40, (hi_q - lo_q) / 40
        lo_p, hi_p = max(ps[i] - 2 * step_p, 0.0), ps[i] + 2 * step_p
        lo_q, hi_q = max(qs[j] - 2 * step_q, 0.0), qs[j] + 2 * step_q
    return best


class TestNonRobustDuals:
    def test_slack_constraints_give_zero_duals(self):
        history = BidHistory(ctr=[0.1, 0.2, 0.3], cvr=[0.2, 0.1, 0.3], wp=[0.1, 0.2, 0.1])
        result = fit_duals_nonrobust(history, B=10.0, C=1e3)
        assert result.duals.p == pytest.approx(0.0, abs=1e-9)
        assert result.duals.q == pytest.approx(0.0, abs=1e-9)
        assert result.objective == pytest.approx(float(np.sum(history.values)))
        assert result.degenerate

    def test_single_auction_tiny_budget(self):
        history = BidHistory(ctr=[0.1], cvr=[0.1], wp=[1.0])
        result = fit_duals_nonrobust(history, B=0.1, C=20.0)
        assert result.duals.p == pytest.approx(0.01, rel=1e-6)
        assert result.objective == pytest.approx(0.001, rel=1e-6)
        assert result.objective == pytest.approx(grid_minimum(history, 0.1, 20.0), abs=1e-6)

    def test_matches_grid_search(self, small_history):
        B = 0.5 * float(small_history.wp.sum())
        result = fit_duals_nonrobust(small_history, B, 1.0)
        assert result.objective <= grid_minimum(small_history, B, 1.0) + 1e-9

    def test_simplex_fallback_close_to_lp(self, small_history):
        B = 0.5 * float(small_history.wp.sum())
        lp = fit_duals_nonrobust(small_history, B, 1.0)
        nm = fit_duals_nonrobust(small_history, B, 1.0, method="simplex")
        assert lp.objective - 1e-9 <= nm.objective <= lp.objective * (1 + 1e-2) + 1e-6

    def test_empty_history(self):
        with pytest.raises(EmptySampleError):
            fit_duals_nonrobust(BidHistory(ctr=[], cvr=[], wp=[]), 1.0, 1.0)

    def test_weak_duality(self, rng):
        for _ in range(10):
            history = BidHistory(ctr=rng.uniform(0.05, 0.5, 8), cvr=rng.uniform(0.05, 0.5, 8),
                                 wp=rng.uniform(0.01, 0.3, 8))
            B = float(rng.uniform(0.2, 1.0) * history.wp.sum())
            C = float(rng.uniform(0.5, 3.0))
            fit = fit_duals_nonrobust(history, B, C)
            assert fit.objective >= brute_force_primal(history, B, C).value - 1e-9


class TestRobustDuals:
    def test_zero_epsilon_matches_nonrobust(self, small_history):
        B, C = 0.4 * float(small_history.wp.sum()), 1.2
        reference = fit_duals_nonrobust(small_history, B, C)
        for result in (
            fit_duals_robust_ctr(small_history, B, C, 0.0),
            fit_duals_robust_cvr(small_history, B, C, 0.0),
            fit_duals_joint(small_history, B, C, 0.0, 0.0),
        ):
            assert result.objective == pytest.approx(reference.objective, abs=1e-6)
            assert result.duals.p == pytest.approx(reference.duals.p, abs=1e-6)
            assert result.duals.q == pytest.approx(reference.duals.q, abs=1e-6)

    def test_robust_objective_not_above_nonrobust(self, small_history):
        B, C = 0.4 * float(small_history.wp.sum()), 1.2
        reference = fit_duals_nonrobust(small_history, B, C).objective
        assert fit_duals_robust_ctr(small_history, B, C, 1e-3).objective <= reference + 1e-9
        assert fit_duals_robust_cvr(small_history, B, C, 1e-3).objective <= reference + 1e-9

    def test_lp_is_optimal_for_its_active_set(self, small_history):
        B, C = 0.4 * float(small_history.wp.sum()), 1.2
        result = fit_duals_robust_ctr(small_history, B, C, 1e-3)
        reference = grid_minimum(small_history, B, C, Policy.ROBUST_CTR, eps_a=1e-3, active=result.active)
        assert result.objective <= reference + 1e-9

    @pytest.mark.slow
    @pytest.mark.parametrize("policy", [Policy.ROBUST_CTR, Policy.ROBUST_CVR, Policy.ROBUST_JOINT])
    def test_weak_duality(self, rng, policy):
        for _ in range(5):
            size = 5
            history = BidHistory(ctr=rng.uniform(0.05, 0.5, size), cvr=rng.uniform(0.05, 0.5, size),
                                 wp=rng.uniform(0.01, 0.3, size))
            B = float(rng.uniform(0.2, 1.0) * history.wp.sum())
            C = float(rng.uniform(1.0 if policy is Policy.ROBUST_JOINT else 0.5, 3.0))
            fit = fit_duals(policy, history, B, C, eps_a=1e-3, eps_b=1e-3)
            primal = brute_force_primal(history, B, C, policy, 1e-3, 1e-3)
            assert fit.objective >= primal.value - 1e-6

    def test_joint_fit_records_lambdas(self, small_history):
        result = fit_duals_joint(small_history, 0.5, 1.0, 1e-3, 1e-3)
        assert result.duals.has_lambdas
        assert 4 * result.duals.lambda_a * result.duals.lambda_b >= 1.0
        assert "certificate" in result.details
        assert result.details["alternations"] >= 1


class TestJointDualTerms:
    def test_reduced_terms_fold_a_term(self, small_history):
        size = len(small_history)
        active = frozenset(range(size))
        alpha = np.sqrt(2.0 * 2e-3)
        v, h = reduced_terms(small_history, 1.5, Policy.ROBUST_JOINT, 2e-3, 1e-3, active, (1.0, 1.0))
        a_terms = joint_A_term(1.0, 1.0, small_history.ctr, small_history.cvr)
        assert v == pytest.approx(small_history.values - alpha * a_terms)
        assert h == pytest.approx(small_history.wp - 1.5 * small_history.ctr + alpha / np.sqrt(size))

    def test_inactive_rounds_keep_nominal_terms(self, small_history):
        v, h = reduced_terms(small_history, 1.0, Policy.ROBUST_JOINT, 1e-3, 1e-3, frozenset({0}), (1.0, 1.0))
        assert v[1:] == pytest.approx(small_history.values[1:])
        assert h[1:] == pytest.approx(small_history.wp[1:] - small_history.ctr[1:])

    def test_requires_lambdas(self, small_history):
        with pytest.raises(ValueError):
            reduced_terms(small_history, 1.0, Policy.ROBUST_JOINT, 1e-3, 1e-3, frozenset({0}))

    def test_fitted_objective_uses_fitted_lambdas(self, small_history):
        B, C = 0.4 * float(small_history.wp.sum()), 1.2
        fit = fit_duals_joint(small_history, B, C, 1e-3, 1e-3)
        lambdas = (fit.duals.lambda_a, fit.duals.lambda_b)
        value = dual_objective(small_history, B, C, fit.duals.p, fit.duals.q, Policy.ROBUST_JOINT,
                               1e-3, 1e-3, fit.active, lambdas)
        assert fit.objective == pytest.approx(value, abs=1e-12)

    def test_fitted_lambdas_solve_certificate_on_active_set(self, small_history):
        B, C = 0.4 * float(small_history.wp.sum()), 1.2
        fit = fit_duals_joint(small_history, B, C, 1e-3, 1e-3)
        _, _, certificate = fit_lambdas(small_history, fit.active, 1e-3, 1e-3)
        assert fit.details["certificate"] == pytest.approx(certificate, rel=1e-4, abs=1e-8)


class TestRandomFeasibleDuals:
    @pytest.mark.parametrize("policy", [Policy.NON_ROBUST, Policy.ROBUST_CTR, Policy.ROBUST_CVR, Policy.ROBUST_JOINT])
    def test_fitted_objective_below_random_points(self, rng, small_history, policy):
        B, C = 0.4 * float(small_history.wp.sum()), 1.2
        fit = fit_duals(policy, small_history, B, C, eps_a=1e-3, eps_b=1e-3)
        lambdas = (fit.duals.lambda_a, fit.duals.lambda_b)
        scale = max(5.0, 3.0 * fit.duals.total)
        points = rng.uniform(0.0, scale, (1000, 2))
        values = np.array([
            dual_objective(small_history, B, C, p, q, policy, 1e-3, 1e-3, fit.active, lambdas)
            for p, q in points
        ])
        assert np.all(values >= fit.objective - 1e-8)


class TestLambdas:
    def test_certificate_without_uncertainty(self, small_history):
        active = frozenset(range(len(small_history)))
        value = lambda_certificate(small_history, active, 1e6, 1e6, 0.0, 0.0)
        assert value == pytest.approx(float(np.sum(small_history.values)), rel=1e-4)

    def test_fitted_lambdas_feasible_and_not_worse_than_start(self, small_history):
        active = frozenset(range(len(small_history)))
        lam_a, lam_b, certificate = fit_lambdas(small_history, active, 1e-3, 1e-3)
        assert 4 * lam_a * lam_b >= 1.0
        assert certificate >= lambda_certificate(small_history, active, 1.0, 1.0, 1e-3, 1e-3) - 1e-12
        assert certificate <= float(np.sum(small_history.values))


class TestDispatch:
    def test_risk_uses_nonrobust_duals(self, small_history):
        risk = fit_duals(Policy.RISK, small_history, 0.5, 1.0, max_alternations=2, rule="fixed_point")
        plain = fit_duals(Policy.NON_ROBUST, small_history, 0.5, 1.0)
        assert risk.objective == pytest.approx(plain.objective)


class TestOptimizer:
    def test_nelder_mead_box(self):
        outcome = nelder_mead_multistart(
            lambda x: (x[0] - 2.0) ** 2 + (x[1] + 1.0) ** 2,
            [1.0, 1.0], dim=2, lower=[0.0, 0.0], upper=[10.0, 10.0], n_starts=3,
        )
        assert outcome.x[0] == pytest.approx(2.0, abs=1e-4)
        assert outcome.x[1] == pytest.approx(0.0, abs=1e-6)

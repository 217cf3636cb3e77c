import numpy as np
import pytest

from src.bidding.agent import CampaignBidder
from src.bidding.policies import bid_nonrobust
from src.core.types import Campaign, Policy, SimulationState
from src.market.datasets import DatasetSpec, generate_synthetic
from src.market.simulator import (
    AuctionSimulator,
    OutcomeMode,
    SimulationConfig,
    charge,
    inject_prediction_noise,
    run_auction,
    run_simulation,
)
from src.metrics.metrics import tcv
from src.risk.budget_guard import BudgetGuard
from tests.conftest import make_rounds


class TestRunAuction:
    def test_highest_bid_wins(self):
        assert run_auction([0.1, 0.3, 0.2]) == (1, pytest.approx(0.3))

    def test_tie_goes_to_lowest_index(self):
        assert run_auction([0.2, 0.2]) == (0, pytest.approx(0.2))

    def test_all_zero_has_no_winner(self):
        assert run_auction([0.0, 0.0, 0.0]) == (None, 0.0)

    def test_negative_bid_rejected(self):
        with pytest.raises(ValueError):
            run_auction([0.1, -0.1])


class TestCharge:
    def test_bid_within_budget(self):
        state = charge(SimulationState.create([0.5]), 0, 0.3)
        assert state.spend[0] == pytest.approx(0.3)
        assert state.remaining_budget[0] == pytest.approx(0.2)

    def test_bid_above_remaining(self):
        state = charge(SimulationState.create([0.1]), 0, 0.3)
        assert state.spend[0] == pytest.approx(0.1)
        assert state.remaining_budget[0] == 0.0

    def test_exhausted_budget(self):
        state = charge(SimulationState.create([0.0]), 0, 0.3)
        assert state.spend[0] == 0.0
        assert state.remaining_budget[0] == 0.0


class TestBudgetGuard:
    def test_detects_overspend(self):
        state = SimulationState.create([1.0])
        state.spend[0] = 1.5
        state.remaining_budget[0] = -0.5
        assert not BudgetGuard().check(state).ok

    def test_detects_broken_identity(self):
        state = SimulationState.create([1.0])
        state.spend[0] = 0.3
        assert BudgetGuard().check(state).details["type"] == "accounting_identity"

    def test_fresh_state_ok(self):
        assert BudgetGuard().check(SimulationState.create([1.0, 2.0])).ok


def synthetic_config(policy=Policy.NON_ROBUST, horizon=15, n=3, seed=0, eps=1e-3, **kwargs):
    campaigns = [
        Campaign(id=i, budget=0.3, cpc_cap=1.0, policy=policy,
                 eps_a=eps if policy.uses_eps_a else 0.0, eps_b=eps if policy.uses_eps_b else 0.0)
        for i in range(n)
    ]
    config = SimulationConfig(horizon=horizon, campaigns=campaigns, eps_a=eps, eps_b=eps, seed=seed,
                              warmup_rounds=3, **kwargs)
    rounds = generate_synthetic(DatasetSpec(horizon=horizon, n_advertisers=n), seed)
    return config, rounds


class TestSimulator:
    @pytest.mark.parametrize("policy", list(Policy))
    def test_deterministic_replay(self, policy):
        config, rounds = synthetic_config(policy)
        first = run_simulation(config, rounds)
        second = run_simulation(config, rounds)
        assert np.array_equal(first.state.bid_matrix(), second.state.bid_matrix())
        assert np.array_equal(first.state.win_matrix(), second.state.win_matrix())
        assert first.results[0].tcv == second.results[0].tcv

    @pytest.mark.parametrize("policy", list(Policy))
    def test_budget_never_exceeded(self, policy):
        config, rounds = synthetic_config(policy, horizon=20)
        state = run_simulation(config, rounds).state
        assert np.all(state.spend <= state.initial_budget + 1e-12)
        assert state.accounting_gap() <= 1e-12
        assert "budget_violation" not in state.flags

    def test_unbeatable_competitors_give_zero_tcv(self):
        rounds = make_rounds(np.full((8, 1), 0.1), np.full((8, 1), 0.1), [(10.0,)] * 8)
        config = SimulationConfig(horizon=8, campaigns=[Campaign(id=0, budget=1.0, cpc_cap=1.0,
                                                                 policy=Policy.ROBUST_CTR, eps_a=1e-3)],
                                  warmup_rounds=2)
        run = run_simulation(config, rounds)
        assert run.results[0].tcv == 0.0
        assert run.results[0].cpc_avg is None

    def test_single_bidder_wins_until_budget_exhausted(self):
        horizon = 30
        ctr = np.full((horizon, 1), 0.1)
        rounds = make_rounds(ctr, np.full((horizon, 1), 0.2), [()] * horizon)
        config = SimulationConfig(horizon=horizon, campaigns=[Campaign(id=0, budget=0.5, cpc_cap=1.0)],
                                  warmup_rounds=2, inject_noise=False)
        state = run_simulation(config, rounds).state
        wins = state.win_matrix()[:, 0]
        bids = state.bid_matrix()[:, 0]
        remaining = 0.5
        for t in range(horizon):
            assert wins[t] == float(remaining > 0)
            remaining -= min(bids[t], remaining) if wins[t] else 0.0
        assert state.remaining_budget[0] == pytest.approx(max(remaining, 0.0))

    def test_noise_injection_respects_ball(self):
        config, rounds = synthetic_config(horizon=40, eps=1e-3)
        noisy = inject_prediction_noise(rounds, 1e-3, 1e-3, seed=0)
        true = np.vstack([r.ctr_true for r in rounds])
        pred = np.vstack([r.ctr_pred for r in noisy])
        for i in range(true.shape[1]):
            assert 0.5 * np.sum((pred[:, i] - true[:, i]) ** 2) <= 1e-3 + 1e-15
        assert not np.array_equal(true, pred)

    def test_metrics_use_true_rates(self):
        config, rounds = synthetic_config(horizon=12)
        run = run_simulation(config, rounds)
        assert tcv(run.state, run.rounds) == pytest.approx(run.state.expected_conversions.sum(), abs=1e-12)

    def test_bernoulli_outcomes_recorded(self):
        config, rounds = synthetic_config(horizon=20, outcome_mode=OutcomeMode.BERNOULLI)
        state = run_simulation(config, rounds).state
        assert np.all(state.realized_conversions <= state.realized_clicks)
        assert state.realized_clicks.sum() <= state.win_matrix().sum()

    @pytest.mark.parametrize("policy", [Policy.NON_ROBUST, Policy.RISK, Policy.ROBUST_CTR, Policy.ROBUST_JOINT])
    def test_bids_ignore_future_rounds(self, policy):
        config, rounds = synthetic_config(policy, horizon=16, inject_noise=False)
        cut = 9
        order = np.random.default_rng(1).permutation(len(rounds) - cut)
        shuffled = rounds[:cut] + [rounds[cut + k] for k in order]
        original = run_simulation(config, rounds).state.bid_matrix()
        permuted = run_simulation(config, shuffled).state.bid_matrix()
        assert np.array_equal(original[:cut], permuted[:cut])

    def test_rejects_short_dataset(self):
        config, rounds = synthetic_config(horizon=10)
        with pytest.raises(ValueError):
            AuctionSimulator(config, rounds[:5])

    def test_campaign_ids_must_be_contiguous(self):
        with pytest.raises(ValueError):
            SimulationConfig(horizon=5, campaigns=[Campaign(id=1, budget=1.0, cpc_cap=1.0)])


class TestCampaignBidder:
    def test_warmup_bid(self):
        bidder = CampaignBidder(Campaign(id=0, budget=2.0, cpc_cap=1.0), horizon=10, warmup_rounds=3)
        decision = bidder.bid(0, [], 0.1, 0.1, 2.0)
        assert decision.bid == pytest.approx(0.1 * 2.0 / 10)
        assert decision.flags == ("warmup",)

    def test_live_robust_bid_always_shaded(self):
        rounds = [r.with_outcome([0.02]) for r in make_rounds(np.full((10, 1), 0.05), np.full((10, 1), 0.05),
                                                              [(0.03,)] * 10)]
        campaign = Campaign(id=0, budget=1.0, cpc_cap=1.0, policy=Policy.ROBUST_CTR, eps_a=1e-2)
        bidder = CampaignBidder(campaign, horizon=20, warmup_rounds=2)
        decision = bidder.bid(10, rounds, 0.05, 0.05, 0.8)
        base = bid_nonrobust(bidder.duals, 1.0, 0.05, 0.05)
        assert decision.active
        assert decision.delta < 0
        assert decision.bid == pytest.approx(max(0.0, base + decision.delta))

    @pytest.mark.parametrize("rule", ["fixed_point", "base_below_price"])
    def test_live_round_active_under_both_rules(self, rule):
        rounds = [r.with_outcome([0.02]) for r in make_rounds(np.full((6, 1), 0.1), np.full((6, 1), 0.1),
                                                              [(0.01,)] * 6)]
        campaign = Campaign(id=0, budget=1.0, cpc_cap=1.0, policy=Policy.ROBUST_CVR, eps_b=1e-4)
        bidder = CampaignBidder(campaign, horizon=12, warmup_rounds=2, active_rule=rule)
        assert bidder.bid(6, rounds, 0.1, 0.1, 0.9).active

    def test_no_budget_no_bid(self):
        bidder = CampaignBidder(Campaign(id=0, budget=2.0, cpc_cap=1.0), horizon=10)
        assert bidder.bid(7, [], 0.1, 0.1, 0.0).bid == 0.0

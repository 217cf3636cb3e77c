import numpy as np
import pytest

from src.core.errors import InvalidRateError
from src.core.types import (
    AuctionRound,
    BidHistory,
    Campaign,
    DualVars,
    Policy,
    RateVector,
    SimulationState,
    SweepResult,
    check_epsilon,
)


class TestRateVector:
    def test_accepts_unit_interval(self):
        rates = RateVector([0.0, 0.5, 1.0])
        assert len(rates) == 3
        assert np.asarray(rates).tolist() == [0.0, 0.5, 1.0]

    def test_rejects_out_of_range(self):
        with pytest.raises(InvalidRateError):
            RateVector([0.2, 1.5])

    def test_values_are_read_only(self):
        rates = RateVector([0.1, 0.2])
        with pytest.raises(ValueError):
            rates.values[0] = 0.3


class TestCampaign:
    def test_defaults(self):
        c = Campaign(id=0, budget=1.0, cpc_cap=1.0)
        assert c.policy is Policy.NON_ROBUST
        assert c.can_bid

    def test_zero_budget_cannot_bid(self):
        assert not Campaign(id=0, budget=0.0, cpc_cap=1.0).can_bid
        assert not Campaign(id=0, budget=1.0, cpc_cap=0.0).can_bid

    def test_epsilon_outside_range_needs_override(self):
        with pytest.raises(ValueError):
            Campaign(id=0, budget=1.0, cpc_cap=1.0, eps_a=0.5)
        c = Campaign(id=0, budget=1.0, cpc_cap=1.0, eps_a=0.5, allow_eps_override=True)
        assert c.eps_a == 0.5

    def test_zero_epsilon_always_allowed(self):
        check_epsilon(0.0, "eps_a")

    def test_negative_budget_rejected(self):
        with pytest.raises(ValueError):
            Campaign(id=0, budget=-1.0, cpc_cap=1.0)


class TestAuctionRound:
    def make(self, **kwargs):
        base = dict(t=0, ctr_true=[0.1, 0.2], cvr_true=[0.1, 0.1],
                    ctr_pred=[0.1, 0.2], cvr_pred=[0.1, 0.1], competitor_bids=(0.05,))
        base.update(kwargs)
        return AuctionRound(**base)

    def test_outcome_price_is_highest_bid(self):
        r = self.make().with_outcome([0.02, 0.3])
        assert r.winning_price == pytest.approx(0.3)

    def test_outcome_price_includes_competitors(self):
        r = self.make(competitor_bids=(0.7,)).with_outcome([0.02, 0.3])
        assert r.winning_price == pytest.approx(0.7)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            self.make(cvr_true=[0.1])

    def test_negative_competitor_bid(self):
        with pytest.raises(ValueError):
            self.make(competitor_bids=(-0.1,))


class TestBidHistory:
    def test_from_rounds_requires_outcomes(self):
        r = AuctionRound(t=0, ctr_true=[0.1], cvr_true=[0.2], ctr_pred=[0.1], cvr_pred=[0.2])
        with pytest.raises(ValueError):
            BidHistory.from_rounds([r], 0)

    def test_from_rounds_uses_predictions(self):
        r = AuctionRound(t=0, ctr_true=[0.1], cvr_true=[0.2], ctr_pred=[0.15], cvr_pred=[0.25],
                         competitor_bids=(0.4,)).with_outcome([0.1])
        history = BidHistory.from_rounds([r], 0)
        assert history.ctr.tolist() == [0.15]
        assert history.wp.tolist() == [0.4]
        truth = BidHistory.from_rounds([r], 0, use_predictions=False)
        assert truth.cvr.tolist() == [0.2]

    def test_extended_appends_candidate(self):
        history = BidHistory(ctr=[0.1], cvr=[0.2], wp=[0.3]).extended(0.4, 0.5)
        assert len(history) == 2
        assert history.wp[-1] == 0.0
        assert history.values[-1] == pytest.approx(0.2)


class TestDualVars:
    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            DualVars(p=-1.0, q=0.0)

    def test_lambdas(self):
        assert not DualVars(1.0, 1.0).has_lambdas
        assert DualVars(1.0, 1.0, 0.6, 0.6).has_lambdas


class TestSimulationState:
    def test_create(self):
        state = SimulationState.create([1.0, 2.0])
        assert state.n_campaigns == 2
        assert state.t == 0
        assert state.accounting_gap() == 0.0
        assert state.win_matrix().shape == (0, 2)


class TestSweepResult:
    def test_flags_sorted_and_deduplicated(self):
        r = SweepResult(Policy.RISK, 0.0, 0.0, 1, 0.1, None, flags=("b", "a", "b"))
        assert r.flags == ("a", "b")
        assert r.flagged

    def test_negative_tcv_rejected(self):
        with pytest.raises(ValueError):
            SweepResult(Policy.RISK, 0.0, 0.0, 1, -0.1, None)

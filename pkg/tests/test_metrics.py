import json
import math

import numpy as np
import pandas as pd
import pytest

from src.core.types import Policy, SimulationState, SweepResult
from src.metrics.metrics import aggregate, cpc_avg, results_frame, tcv, write_results_csv, write_summary_json
from tests.conftest import make_rounds


def state_with(wins, bids, budget=1.0):
    """按逐轮获胜/出价矩阵构造单广告主状态"""
    state = SimulationState.create([budget])
    for w, b in zip(wins, bids):
        state.wins.append(np.array([float(w)]))
        state.bids.append(np.array([float(b)]))
    return state


class TestTcv:
    def test_no_wins(self):
        rounds = make_rounds([[0.1], [0.2]], [[0.1], [0.1]], [(), ()])
        assert tcv(state_with([0, 0], [0.0, 0.0]), rounds) == 0.0

    def test_single_win(self):
        rounds = make_rounds([[0.1]], [[0.05]], [()])
        assert tcv(state_with([1], [0.2]), rounds) == pytest.approx(0.005)

    def test_empty_state(self):
        assert tcv(SimulationState.create([1.0]), []) == 0.0


class TestCpc:
    def test_single_win(self):
        rounds = make_rounds([[0.1]], [[0.05]], [()])
        assert cpc_avg(state_with([1], [0.2]), rounds) == pytest.approx(2.0)

    def test_no_clicks_is_undefined(self):
        rounds = make_rounds([[0.1], [0.2]], [[0.1], [0.1]], [(), ()])
        assert cpc_avg(state_with([0, 0], [0.1, 0.1]), rounds) is None

    def test_scales_with_bids(self):
        rounds = make_rounds([[0.1], [0.3], [0.2]], [[0.1], [0.1], [0.1]], [(), (), ()])
        wins, bids = [1, 0, 1], np.array([0.05, 0.2, 0.04])
        base = cpc_avg(state_with(wins, bids), rounds)
        assert cpc_avg(state_with(wins, 3.0 * bids), rounds) == pytest.approx(3.0 * base)


def result(seed, value, policy=Policy.NON_ROBUST, cpc=1.0, flags=()):
    return SweepResult(policy=policy, eps_a=0.0, eps_b=0.0, seed=seed, tcv=value, cpc_avg=cpc, flags=flags)


class TestAggregate:
    def test_mean_and_sample_std(self):
        summary = aggregate([result(0, 1.0), result(1, 3.0)])
        row = summary.iloc[0]
        assert row.mean_tcv == pytest.approx(2.0)
        assert row.std_tcv == pytest.approx(math.sqrt(2.0))
        assert not row.single_seed

    def test_single_seed(self):
        row = aggregate([result(0, 1.5)]).iloc[0]
        assert row.std_tcv == 0.0
        assert row.std_cpc == 0.0
        assert row.single_seed

    def test_undefined_cpc_ignored(self):
        row = aggregate([result(0, 1.0, cpc=None), result(1, 1.0, cpc=2.0)]).iloc[0]
        assert row.mean_cpc == pytest.approx(2.0)

    def test_flag_count(self):
        row = aggregate([result(0, 1.0, flags=("fit_not_converged",)), result(1, 1.0)]).iloc[0]
        assert row.n_flagged == 1

    def test_empty(self):
        assert aggregate([]).empty

    def test_rows_sorted(self):
        frame = results_frame([result(1, 1.0, Policy.ROBUST_CTR), result(0, 1.0), result(0, 1.0, Policy.ROBUST_CTR)])
        assert list(zip(frame.policy, frame.seed)) == [("NonRobust", 0), ("RobustCTR", 0), ("RobustCTR", 1)]


class TestWriters:
    def test_csv_writes_empty_cpc(self, tmp_path):
        path = write_results_csv([result(0, 0.0, cpc=None)], tmp_path / "out" / "r.csv")
        frame = pd.read_csv(path, keep_default_na=False)
        assert frame.loc[0, "cpc_avg"] == ""
        assert frame.loc[0, "policy"] == "NonRobust"

    def test_json_keys_sorted(self, tmp_path):
        path = write_summary_json([result(0, 1.0, cpc=None), result(1, 2.0, cpc=None)], tmp_path / "s.json")
        payload = json.loads(path.read_text(encoding="utf-8"))
        assert len(payload) == 1
        assert list(payload[0]) == sorted(payload[0])
        assert payload[0]["mean_cpc"] is None
        assert payload[0]["n_seeds"] == 2

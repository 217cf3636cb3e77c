"""
测试公共夹具
"""
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.core.types import AuctionRound, BidHistory  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_history(rng):
    """6 轮随机历史"""
    return BidHistory(
        ctr=rng.uniform(0.05, 0.5, 6),
        cvr=rng.uniform(0.05, 0.5, 6),
        wp=rng.uniform(0.01, 0.3, 6),
    )


def make_rounds(ctr, cvr, competitor_bids):
    """按 (T, n) 速率矩阵与逐轮竞争出价构造拍卖流，预测值等于真实值"""
    ctr = np.atleast_2d(np.asarray(ctr, dtype=float))
    cvr = np.atleast_2d(np.asarray(cvr, dtype=float))
    return [
        AuctionRound(
            t=t, ctr_true=ctr[t], cvr_true=cvr[t], ctr_pred=ctr[t], cvr_pred=cvr[t],
            competitor_bids=tuple(competitor_bids[t]),
        )
        for t in range(ctr.shape[0])
    ]

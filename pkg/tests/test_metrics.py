import math

import numpy as np
import pytest

from coldmatch.errors import ShapeError
from coldmatch.matcher import ground_truth_rank
from coldmatch.metrics import RankOutcome, hr_at, mrr, ndcg_at


class TestHrAt:
    def test_top_rank(self):
        assert hr_at(1, 5) == 1.0

    def test_boundary_exclusion(self):
        assert hr_at(11, 10) == 0.0

    def test_boundary_inclusion(self):
        assert hr_at(10, 10) == 1.0

    def test_bad_cutoff(self):
        with pytest.raises(ShapeError):
            hr_at(1, 0)


class TestNdcgAt:
    def test_ideal_position(self):
        assert ndcg_at(1, 10) == 1.0

    def test_rank_three(self):
        assert ndcg_at(3, 10) == pytest.approx(0.5)

    def test_outside_cutoff(self):
        assert ndcg_at(15, 10) == 0.0

    def test_closed_form(self):
        assert ndcg_at(7, 20) == pytest.approx(1.0 / math.log2(8))


class TestMrr:
    def test_rank_one(self):
        assert mrr(1) == 1.0

    def test_rank_four(self):
        assert mrr(4) == 0.25

    def test_rank_128(self):
        assert mrr(128) == pytest.approx(0.0078125)

    def test_bad_rank(self):
        with pytest.raises(ShapeError):
            mrr(0)


class TestRankOutcome:
    def test_valid(self):
        out = RankOutcome(rank=3, candidate_count=128)
        assert out.rank == 3

    def test_rank_beyond_count_rejected(self):
        with pytest.raises(ShapeError):
            RankOutcome(rank=129, candidate_count=128)

    def test_rank_zero_rejected(self):
        with pytest.raises(ShapeError):
            RankOutcome(rank=0, candidate_count=4)


class TestMetricProperties:
    def test_monotonicity_randomized(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            rank = int(rng.integers(1, 200))
            p1 = int(rng.integers(1, 100))
            p2 = p1 + int(rng.integers(0, 100))
            assert hr_at(rank, p1) <= hr_at(rank, p2)
            assert ndcg_at(rank, p1) <= hr_at(rank, p1)
            if rank > 1:
                assert mrr(rank) < mrr(rank - 1)
            assert mrr(rank) <= 1.0

    def test_monotone_transform_invariance_randomized(self):
        rng = np.random.default_rng(1)
        transforms = [
            lambda s: 3.0 * s + 2.0,
            np.exp,
            lambda s: np.tanh(s) * 0.5,
            lambda s: s ** 3,
        ]
        for _ in range(1000):
            n = int(rng.integers(2, 20))
            scores = np.round(rng.normal(size=n), 1)  # coarse grid forces ties
            items = [f"i{j:02d}" for j in range(n)]
            gt = items[int(rng.integers(n))]
            base = ground_truth_rank(scores, items, gt)
            f = transforms[int(rng.integers(len(transforms)))]
            assert ground_truth_rank(f(scores), items, gt) == base
            for p in (5, 10, 20):
                assert hr_at(base, p) == hr_at(ground_truth_rank(f(scores), items, gt), p)

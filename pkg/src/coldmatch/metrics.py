"""Rank-based metrics for single-relevant-item retrieval."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class RankOutcome:
    """Where the ground truth landed among the candidates."""

    rank: int
    candidate_count: int

    def __post_init__(self):
        if not 1 <= self.rank <= self.candidate_count:
            raise ShapeError(
                f"rank {self.rank} outside [1, {self.candidate_count}]")


def hr_at(rank: int, p: int) -> float:
    """1.0 iff the ground truth is within the top p."""
    if p < 1:
        raise ShapeError(f"cutoff p must be >= 1, got {p}")
    if rank < 1:
        raise ShapeError(f"rank must be >= 1, got {rank}")
    return 1.0 if rank <= p else 0.0


def ndcg_at(rank: int, p: int) -> float:
    """Discounted gain 1/log2(rank+1) within the cutoff, 0 outside.

    With a single relevant item the ideal DCG is 1, so this is already
    normalized.
    """
    if p < 1:
        raise ShapeError(f"cutoff p must be >= 1, got {p}")
    if rank < 1:
        raise ShapeError(f"rank must be >= 1, got {rank}")
    if rank > p:
        return 0.0
    return 1.0 / float(np.log2(rank + 1))


def mrr(rank: int) -> float:
    """Reciprocal rank; averaging across queries happens in the report."""
    if rank < 1:
        raise ShapeError(f"rank must be >= 1, got {rank}")
    return 1.0 / rank

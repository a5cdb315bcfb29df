"""Recurrent matching processor, cosine scoring, and candidate ranking.

The query representation is refined against each candidate's support-set
representation by t steps of a gated cell (the cell input is always the
original query; the recurrent input concatenates the evolving query with
the support representation; a residual adds the original query each
step). Refined queries are scored by cosine and normalized by softmax.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import DegenerateVectorError, ShapeError
from .params import ModelParams
from .tensor import Tensor


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=float))


def refine_query(q, s, t_steps: int, params: ModelParams) -> Tensor:
    """Refine one query vector against one support vector for t steps."""
    if t_steps < 0:
        raise ShapeError(f"t_steps must be >= 0, got {t_steps}")
    q = _as_tensor(q)
    s = _as_tensor(s)
    if q.data.shape != s.data.shape or q.data.ndim != 1:
        raise ShapeError(f"query/support shapes {q.data.shape} vs {s.data.shape}")
    q_cur = q
    cell = Tensor(np.zeros_like(q.data))
    for _ in range(t_steps):
        h_cat = T.concat([q_cur, s])
        q_hat, cell = T.lstm_cell_step(q, h_cat, cell,
                                       params.cell_wx, params.cell_wh, params.cell_b)
        q_cur = T.add(q_hat, q)
    return q_cur


def refine_query_rows(Q: Tensor, S: Tensor, t_steps: int, params: ModelParams) -> Tensor:
    """Row-batched refinement: row i of Q against row i of S."""
    if Q.data.shape != S.data.shape or Q.data.ndim != 2:
        raise ShapeError(f"batched query/support shapes {Q.data.shape} vs {S.data.shape}")
    q_cur = Q
    cell = Tensor(np.zeros_like(Q.data))
    for _ in range(t_steps):
        h_cat = T.concat([q_cur, S], axis=1)
        q_hat, cell = T.lstm_cell_step(Q, h_cat, cell,
                                       params.cell_wx, params.cell_wh, params.cell_b)
        q_cur = T.add(q_hat, Q)
    return q_cur


def _check_nonzero_rows(mat: np.ndarray, labels: Sequence[str] | None, role: str) -> None:
    norms = np.linalg.norm(mat, axis=1)
    for j in np.flatnonzero(norms == 0.0):
        name = labels[j] if labels is not None else f"index {j}"
        raise DegenerateVectorError(f"zero-norm {role} representation for candidate {name}")


def score_all(q, support_rows, t_steps: int, params: ModelParams,
              labels: Sequence[str] | None = None) -> tuple[Tensor, Tensor]:
    """Scores of one query against N support representations.

    Returns (z, y): z are per-candidate cosine similarities of the
    per-candidate refined queries, y their softmax.
    """
    q = _as_tensor(q)
    S = _as_tensor(support_rows)
    if S.data.ndim != 2 or S.data.shape[0] < 2:
        raise ShapeError(f"need at least 2 support rows, got shape {S.data.shape}")
    n = S.data.shape[0]
    _check_nonzero_rows(S.data, labels, "support")
    Q = T.repeat_rows(T.reshape(q, (1, q.data.size)), n)
    refined = refine_query_rows(Q, S, t_steps, params)
    _check_nonzero_rows(refined.data, labels, "refined query")
    z = T.rowwise_cosine(refined, S)
    return z, T.softmax(z)


def score_matrix(Q: Tensor, S: Tensor, t_steps: int, params: ModelParams) -> Tensor:
    """All-pairs probability matrix for an episode.

    Q is (N, 2d) query representations, S is (N, 2d) support-set
    representations; entry (i, j) of the result is the probability that
    query i matches candidate j. All N*N refinements run as one batch.
    """
    if Q.data.ndim != 2 or S.data.ndim != 2 or Q.data.shape[1] != S.data.shape[1]:
        raise ShapeError(f"incompatible shapes {Q.data.shape} vs {S.data.shape}")
    n_q = Q.data.shape[0]
    n_s = S.data.shape[0]
    _check_nonzero_rows(S.data, None, "support")
    Qx = T.repeat_rows(Q, n_s)
    Sx = T.tile_rows(S, n_q)
    refined = refine_query_rows(Qx, Sx, t_steps, params)
    _check_nonzero_rows(refined.data, None, "refined query")
    z = T.reshape(T.rowwise_cosine(refined, Sx), (n_q, n_s))
    return T.softmax(z, axis=1)


def rank_candidates(scores, candidate_items: Sequence[str]) -> list[str]:
    """Candidates by descending score; ties break by ascending item id."""
    scores = np.asarray(scores.data if isinstance(scores, Tensor) else scores, dtype=float)
    if scores.ndim != 1 or scores.size != len(candidate_items):
        raise ShapeError(f"{scores.size} scores for {len(candidate_items)} candidates")
    order = sorted(range(scores.size), key=lambda j: (-scores[j], candidate_items[j]))
    return [candidate_items[j] for j in order]


def ground_truth_rank(scores, candidate_items: Sequence[str], ground_truth: str) -> int:
    """1-based rank of the ground truth, pessimistic under ties.

    Equal-scored competitors count as ranked ahead of the ground truth,
    so a constant scorer yields the worst possible rank.
    """
    scores = np.asarray(scores.data if isinstance(scores, Tensor) else scores, dtype=float)
    try:
        gt_index = list(candidate_items).index(ground_truth)
    except ValueError:
        raise ShapeError(f"ground truth {ground_truth!r} not among candidates") from None
    gt_score = scores[gt_index]
    better = int(np.sum(scores > gt_score))
    tied = int(np.sum(scores == gt_score)) - 1
    return 1 + better + tied

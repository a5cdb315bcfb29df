"""Sequence-pair encoders: attention over prefixes, residual pair lift.

A prefix is summarized by additive attention conditioned on its last item
and its mean embedding; the summary is lifted to pair space either by
concatenation with the target embedding (support side) or by a learned
projection (query side, which never sees the hidden target). Support
lifts of one candidate are mean-pooled into the set representation.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .data import SequencePair, Vocabulary
from .errors import ParseError, ShapeError
from .params import ModelParams
from .tensor import Tensor


def _attend(prefix_ids, params: ModelParams) -> tuple[Tensor, Tensor]:
    """Prefix embeddings and their attention weights.

    Scores are e_j = p . sigmoid(W1 v_last + W2 v_j + W3 v_mean + b);
    the weights are their softmax. Without the squashing nonlinearity the
    last-item and mean terms would be a constant shift over positions and
    cancel in the softmax, leaving W1, W3, and b with exactly zero
    gradient and the weights blind to the user's latest click.
    """
    ids = np.asarray(prefix_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ShapeError(f"prefix must be a non-empty 1-d id array, got shape {ids.shape}")
    d = params.dim
    V = T.gather_rows(params.item_emb, ids)
    v_last = T.reshape(T.narrow(V, 0, ids.size - 1, 1), (d,))
    v_mean = T.tmean(V, axis=0)
    context = T.add(T.add(T.matmul(params.attn_w1, v_last),
                          T.matmul(params.attn_w3, v_mean)), params.attn_b)
    gates = T.sigmoid(T.add(T.affine(params.attn_w2, V), context))
    scores = T.matmul(gates, params.attn_p)
    return V, T.softmax(scores)


def attention_weights(prefix_ids, params: ModelParams) -> Tensor:
    """Normalized attention weights over the prefix positions."""
    _, alpha = _attend(prefix_ids, params)
    return alpha


def sequence_repr(prefix_ids, params: ModelParams) -> Tensor:
    """Attention-weighted sum of the prefix's item embeddings (length d)."""
    V, alpha = _attend(prefix_ids, params)
    return T.matmul(T.transpose(V), alpha)


def residual_ffn(h0: Tensor, params: ModelParams) -> Tensor:
    """h0 + ReLU(W h0 + b), shared between support and query lifts."""
    return T.add(h0, T.relu(T.affine(params.ffn_w, h0, params.ffn_b)))


def support_pair_repr(seq_vec: Tensor, target_id: int, params: ModelParams) -> Tensor:
    """Lift (sequence summary, target embedding) to pair space (length 2d)."""
    v_target = T.reshape(T.gather_rows(params.item_emb, np.array([target_id])), (params.dim,))
    h0 = T.concat([seq_vec, v_target])
    return residual_ffn(h0, params)


def query_pair_repr(seq_vec: Tensor, params: ModelParams) -> Tensor:
    """Lift the query's sequence summary alone to pair space (length 2d).

    The hidden ground-truth item is never an input here, so its value
    cannot leak into the representation.
    """
    h0 = T.matmul(params.query_w, seq_vec)
    return residual_ffn(h0, params)


def aggregate(pair_reprs: Sequence[Tensor]) -> Tensor:
    """Mean-pool K pair representations into one set representation."""
    if len(pair_reprs) == 0:
        raise ShapeError("aggregate requires at least one pair representation")
    if len(pair_reprs) == 1:
        return pair_reprs[0]
    return T.tmean(T.stack(list(pair_reprs)), axis=0)


def encode_support_set(pairs: Sequence[SequencePair], vocab: Vocabulary,
                       params: ModelParams) -> Tensor:
    """Set representation of one candidate's K support pairs."""
    reprs = []
    for pair in pairs:
        seq_vec = sequence_repr(vocab.encode(pair.prefix), params)
        reprs.append(support_pair_repr(seq_vec, vocab.index(pair.target), params))
    return aggregate(reprs)


def encode_query(pair: SequencePair, vocab: Vocabulary, params: ModelParams) -> Tensor:
    """Query representation from the prefix only."""
    seq_vec = sequence_repr(vocab.encode(pair.prefix), params)
    return query_pair_repr(seq_vec, params)


def read_embedding_file(path: str) -> tuple[list[str], np.ndarray]:
    """Parse the text embedding format: header `n d`, then `id v_1 .. v_d`."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ParseError(f"{path}:1: expected header 'count dim'")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise ParseError(f"{path}:1: non-integer header fields") from None
        ids: list[str] = []
        rows = np.zeros((count, dim))
        for lineno in range(2, count + 2):
            parts = fh.readline().split()
            if len(parts) != dim + 1:
                raise ParseError(f"{path}:{lineno}: expected 1 id and {dim} values, got {len(parts)} fields")
            ids.append(parts[0])
            try:
                rows[lineno - 2] = [float(v) for v in parts[1:]]
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric embedding value") from None
    return ids, rows


def write_embedding_file(path: str, ids: Sequence[str], rows: np.ndarray) -> None:
    rows = np.asarray(rows)
    if rows.ndim != 2 or rows.shape[0] != len(ids):
        raise ShapeError(f"embedding rows shape {rows.shape} does not match {len(ids)} ids")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{rows.shape[0]} {rows.shape[1]}\n")
        for item, row in zip(ids, rows):
            values = " ".join(f"{v:.8g}" for v in row)
            fh.write(f"{item} {values}\n")


def load_pretrained_embeddings(path: str, vocab: Vocabulary, d: int,
                               rng: np.random.Generator) -> np.ndarray:
    """Embedding table seeded from a file; absent items stay random."""
    ids, rows = read_embedding_file(path)
    if rows.shape[1] != d:
        raise ShapeError(f"embedding file dimension {rows.shape[1]} != configured d={d}")
    bound = 1.0 / np.sqrt(d)
    table = rng.uniform(-bound, bound, size=(len(vocab), d))
    for item, row in zip(ids, rows):
        if item in vocab:
            table[vocab.index(item)] = row
    return table

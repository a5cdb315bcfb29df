"""Trainable parameter container for the encoder and matcher."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, parameter


@dataclass
class ModelParams:
    """All trainable tensors, with shapes fixed by (vocab size, d).

    item_emb    (|V|, d)   item embedding table
    attn_p      (d,)       attention projection vector
    attn_w1/2/3 (d, d)     attention maps for last item / position / mean
    attn_b      (d,)       attention bias
    ffn_w       (2d, 2d)   shared residual feed-forward weight
    ffn_b       (2d,)      shared residual feed-forward bias
    query_w     (2d, d)    query-side lift of the sequence representation
    cell_wx     (8d, 2d)   gated-cell input weights (four stacked gates)
    cell_wh     (8d, 4d)   gated-cell recurrent weights
    cell_b      (8d,)      gated-cell bias
    """

    item_emb: Tensor
    attn_p: Tensor
    attn_w1: Tensor
    attn_w2: Tensor
    attn_w3: Tensor
    attn_b: Tensor
    ffn_w: Tensor
    ffn_b: Tensor
    query_w: Tensor
    cell_wx: Tensor
    cell_wh: Tensor
    cell_b: Tensor

    @property
    def dim(self) -> int:
        return self.item_emb.data.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.item_emb.data.shape[0]

    @property
    def dtype(self):
        return self.item_emb.data.dtype

    def as_dict(self) -> dict[str, Tensor]:
        """Named tensors in a fixed, stable order."""
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def validate(self) -> None:
        d = self.dim
        expected = expected_shapes(self.vocab_size, d)
        for name, tensor in self.as_dict().items():
            if tensor.data.shape != expected[name]:
                raise ShapeError(
                    f"parameter '{name}' has shape {tensor.data.shape}, expected {expected[name]}")
            if not np.all(np.isfinite(tensor.data)):
                raise ShapeError(f"parameter '{name}' contains non-finite values")


def expected_shapes(vocab_size: int, d: int) -> dict[str, tuple[int, ...]]:
    return {
        "item_emb": (vocab_size, d),
        "attn_p": (d,),
        "attn_w1": (d, d),
        "attn_w2": (d, d),
        "attn_w3": (d, d),
        "attn_b": (d,),
        "ffn_w": (2 * d, 2 * d),
        "ffn_b": (2 * d,),
        "query_w": (2 * d, d),
        "cell_wx": (8 * d, 2 * d),
        "cell_wh": (8 * d, 4 * d),
        "cell_b": (8 * d,),
    }


def init_params(vocab_size: int, d: int, rng: np.random.Generator,
                dtype=np.float32, item_emb: np.ndarray | None = None) -> ModelParams:
    """Initialize weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.

    Modules that wrap or refine a representation start close to a pass-
    through and train away from it (the ReZero/Fixup recipe for residual
    blocks): the query projection starts as an identity over its first
    block and zeros over its second, and the attention head, pair-encoder
    branch, and matching cell get 0.1-scaled weights, so at initialization
    attention is near uniform, lifts are near-exact, refinement is a small
    perturbation, and cosine matching degenerates to plain representation
    similarity against the support prefixes. The zero block aligns with
    the target-item half of the support lift and only contributes once
    training grows it, at which point it acts as a learned transition map
    from query context to likely next items.

    ``item_emb`` overrides the random embedding table (pre-trained rows).
    """
    if vocab_size < 1 or d < 1:
        raise ShapeError(f"vocab_size and d must be positive, got {vocab_size}, {d}")

    def uniform(shape, fan_in, scale=1.0):
        bound = scale / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    emb = uniform((vocab_size, d), d) if item_emb is None else np.asarray(item_emb, dtype=float)
    if emb.shape != (vocab_size, d):
        raise ShapeError(f"item embedding table has shape {emb.shape}, expected {(vocab_size, d)}")

    eye_zero = np.vstack([np.eye(d), np.zeros((d, d))])
    values = {
        "item_emb": emb,
        "attn_p": uniform((d,), d, scale=0.1),
        "attn_w1": uniform((d, d), d),
        "attn_w2": uniform((d, d), d),
        "attn_w3": uniform((d, d), d),
        "attn_b": np.zeros(d),
        "ffn_w": uniform((2 * d, 2 * d), 2 * d, scale=0.1),
        "ffn_b": np.zeros(2 * d),
        "query_w": eye_zero + uniform((2 * d, d), d, scale=0.1),
        "cell_wx": uniform((8 * d, 2 * d), 2 * d, scale=0.1),
        "cell_wh": uniform((8 * d, 4 * d), 4 * d, scale=0.1),
        "cell_b": np.zeros(8 * d),
    }
    return ModelParams(**{name: parameter(arr.astype(dtype)) for name, arr in values.items()})

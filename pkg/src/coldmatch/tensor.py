"""Dense tensors with a reverse-mode gradient tape.

A ``Tensor`` wraps a numpy array. While a ``GradTape`` is active, every
primitive below appends one record (output, inputs, vjp) to the tape;
replaying the records in reverse accumulates gradients of a scalar with
respect to any tracked tensor. Only the primitives the model needs are
implemented; there is no graph mode and no GPU path.

Tensors are treated as immutable during a forward/backward pass. The
active tape is thread-local, so read-only evaluation may run in parallel
threads without touching another thread's tape.
"""

from __future__ import annotations

import threading
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateVectorError, NumericError, ShapeError

_state = threading.local()

_DEBUG_FINITE = False


def set_debug_checks(enabled: bool) -> None:
    """Enable NaN/Inf detection on every primitive output (slow)."""
    global _DEBUG_FINITE
    _DEBUG_FINITE = bool(enabled)


class Tensor:
    """Dense real-valued array; ``track=True`` marks it as differentiable."""

    __slots__ = ("data", "track")

    def __init__(self, data, track: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.track = track

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), track=self.track)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, track={self.track})"


def parameter(data, dtype=None) -> Tensor:
    """A tracked leaf tensor (trainable parameter)."""
    return Tensor(data, track=True, dtype=dtype)


class GradTape:
    """Ordered record of primitive applications for one forward pass.

    Use as a context manager around the forward computation, then call
    :meth:`gradient` with the scalar output and the leaf tensors of
    interest. A tape is single-owner: one training step, one tape.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __enter__(self) -> "GradTape":
        if getattr(_state, "tape", None) is not None:
            raise NumericError("a gradient tape is already active in this thread")
        _state.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _state.tape = None
        return False

    def __len__(self) -> int:
        return len(self._records)

    def gradient(self, target: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of scalar ``target`` w.r.t. each tensor in ``sources``.

        Sources the target does not depend on get an exact zero array of
        the source's shape.
        """
        if target.data.size != 1:
            raise ShapeError(f"gradient target must be scalar, got shape {target.data.shape}")
        grads: dict[int, np.ndarray] = {id(target): np.ones_like(target.data)}
        for out, inputs, vjp in reversed(self._records):
            g = grads.get(id(out))
            if g is None:
                continue
            partials = vjp(g)
            for inp, pg in zip(inputs, partials):
                if pg is None:
                    continue
                acc = grads.get(id(inp))
                grads[id(inp)] = pg if acc is None else acc + pg
        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]


def _tape() -> GradTape | None:
    return getattr(_state, "tape", None)


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _emit(out_data: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    """Create the output tensor and record the op if a tape is tracing."""
    if _DEBUG_FINITE and not np.all(np.isfinite(out_data)):
        raise NumericError("non-finite value produced by a tensor primitive")
    tape = _tape()
    track = any(t.track for t in inputs)
    out = Tensor(out_data, track=track and tape is not None)
    if out.track:
        tape._records.append((out, inputs, vjp))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, like=a)
    out = a.data + b.data

    def vjp(g):
        return (
            _unbroadcast(g, a.data.shape) if a.track else None,
            _unbroadcast(g, b.data.shape) if b.track else None,
        )

    return _emit(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, like=a)
    out = a.data - b.data

    def vjp(g):
        return (
            _unbroadcast(g, a.data.shape) if a.track else None,
            _unbroadcast(-g, b.data.shape) if b.track else None,
        )

    return _emit(out, (a, b), vjp)


def neg(a) -> Tensor:
    a = _wrap(a)

    def vjp(g):
        return (-g,)

    return _emit(-a.data, (a,), vjp)


def mul(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, like=a)
    ad, bd = a.data, b.data
    out = ad * bd

    def vjp(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.track else None,
            _unbroadcast(g * ad, bd.shape) if b.track else None,
        )

    return _emit(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, like=a)
    ad, bd = a.data, b.data
    out = ad / bd

    def vjp(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.track else None,
            _unbroadcast(-g * ad / (bd * bd), bd.shape) if b.track else None,
        )

    return _emit(out, (a, b), vjp)


def tsum(a, axis: int | None = None) -> Tensor:
    a = _wrap(a)
    ad = a.data
    out = ad.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, ad.shape).astype(ad.dtype, copy=False),)
        return (np.repeat(np.expand_dims(g, axis), ad.shape[axis], axis=axis),)

    return _emit(out, (a,), vjp)


def tmean(a, axis: int | None = None) -> Tensor:
    a = _wrap(a)
    ad = a.data
    out = ad.mean(axis=axis)
    n = ad.size if axis is None else ad.shape[axis]

    def vjp(g):
        if axis is None:
            return ((np.broadcast_to(g, ad.shape) / n).astype(ad.dtype, copy=False),)
        return (np.repeat(np.expand_dims(g / n, axis), ad.shape[axis], axis=axis),)

    return _emit(out, (a,), vjp)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product: (m,n)@(n,) -> (m,) or (m,n)@(n,k) -> (m,k)."""
    a = _wrap(a)
    b = _wrap(b, like=a)
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim not in (1, 2):
        raise ShapeError(f"matmul expects a 2-d left operand, got {ad.shape} @ {bd.shape}")
    if ad.shape[1] != bd.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {ad.shape} @ {bd.shape}")
    out = ad @ bd

    if bd.ndim == 1:
        def vjp(g):
            return (
                np.outer(g, bd) if a.track else None,
                ad.T @ g if b.track else None,
            )
    else:
        def vjp(g):
            return (
                g @ bd.T if a.track else None,
                ad.T @ g if b.track else None,
            )

    return _emit(out, (a, b), vjp)


def transpose(a) -> Tensor:
    a = _wrap(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.data.shape}")

    def vjp(g):
        return (g.T,)

    return _emit(a.data.T, (a,), vjp)


def affine(w, x, b=None) -> Tensor:
    """``w @ x + b``; rows of a 2-d ``x`` are treated as a batch via ``x @ w.T + b``."""
    w = _wrap(w)
    x = _wrap(x, like=w)
    if x.data.ndim == 1:
        y = matmul(w, x)
    elif x.data.ndim == 2:
        y = matmul(x, transpose(w))
    else:
        raise ShapeError(f"affine input must be 1-d or 2-d, got shape {x.data.shape}")
    return y if b is None else add(y, b)


def dot(u, v) -> Tensor:
    """Inner product of two vectors (scalar output)."""
    return tsum(mul(u, v))


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    src = a.data.shape

    def vjp(g):
        return (g.reshape(src),)

    return _emit(a.data.reshape(shape), (a,), vjp)


def concat(parts: Iterable, axis: int = 0) -> Tensor:
    parts = [_wrap(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        slices = []
        for i, p in enumerate(parts):
            if not p.track:
                slices.append(None)
                continue
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offsets[i], offsets[i + 1])
            slices.append(g[tuple(idx)])
        return tuple(slices)

    return _emit(out, tuple(parts), vjp)


def stack(parts: Iterable) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""
    parts = [_wrap(p) for p in parts]
    out = np.stack([p.data for p in parts], axis=0)

    def vjp(g):
        return tuple(g[i] if p.track else None for i, p in enumerate(parts))

    return _emit(out, tuple(parts), vjp)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice ``[start, start+length)`` along ``axis``."""
    a = _wrap(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def vjp(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _emit(a.data[idx].copy(), (a,), vjp)


def repeat_rows(a, k: int) -> Tensor:
    """Repeat each row of a matrix ``k`` times: (n,d) -> (n*k,d)."""
    a = _wrap(a)
    n, d = a.data.shape

    def vjp(g):
        return (g.reshape(n, k, d).sum(axis=1),)

    return _emit(np.repeat(a.data, k, axis=0), (a,), vjp)


def tile_rows(a, k: int) -> Tensor:
    """Tile a whole matrix ``k`` times along axis 0: (n,d) -> (k*n,d)."""
    a = _wrap(a)
    n, d = a.data.shape

    def vjp(g):
        return (g.reshape(k, n, d).sum(axis=0),)

    return _emit(np.tile(a.data, (k, 1)), (a,), vjp)


def gather_rows(table, ids) -> Tensor:
    """Select rows of a matrix by integer index; gradients scatter-add back."""
    table = _wrap(table)
    idx = np.asarray(ids, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ShapeError(f"row index out of range for table with {table.data.shape[0]} rows")

    def vjp(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return _emit(table.data[idx], (table,), vjp)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a) -> Tensor:
    a = _wrap(a)
    ad = a.data
    out = np.maximum(ad, 0)

    def vjp(g):
        return (g * (ad > 0),)

    return _emit(out, (a,), vjp)


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    # computed via the stable two-sided form
    ad = a.data
    out = np.empty_like(ad)
    pos = ad >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-ad[pos]))
    ez = np.exp(ad[~pos])
    out[~pos] = ez / (1.0 + ez)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _emit(out, (a,), vjp)


def tanh(a) -> Tensor:
    a = _wrap(a)
    out = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _emit(out, (a,), vjp)


def exp(a) -> Tensor:
    a = _wrap(a)
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return _emit(out, (a,), vjp)


def log(a) -> Tensor:
    a = _wrap(a)
    ad = a.data

    def vjp(g):
        return (g / ad,)

    return _emit(np.log(ad), (a,), vjp)


def sqrt(a) -> Tensor:
    a = _wrap(a)
    out = np.sqrt(a.data)

    def vjp(g):
        return (g * (0.5 / out),)

    return _emit(out, (a,), vjp)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient is passed through strictly inside."""
    a = _wrap(a)
    ad = a.data
    out = np.clip(ad, lo, hi)

    def vjp(g):
        return (g * ((ad > lo) & (ad < hi)),)

    return _emit(out, (a,), vjp)


def softmax(a, axis: int = -1) -> Tensor:
    """Shift-stable softmax along ``axis``; output sums to one there."""
    a = _wrap(a)
    ad = a.data
    if ad.size == 0:
        raise ShapeError("softmax of an empty vector is undefined")
    shifted = ad - ad.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _emit(out, (a,), vjp)


# ---------------------------------------------------------------------------
# composite operations


def norm(a) -> Tensor:
    """Euclidean norm of a vector (scalar tensor)."""
    return sqrt(tsum(mul(a, a)))


def cosine(u, v) -> Tensor:
    """Cosine similarity of two nonzero vectors.

    Raises DegenerateVectorError on a zero-norm operand rather than
    silently returning 0.
    """
    u = _wrap(u)
    v = _wrap(v, like=u)
    nu = float(np.linalg.norm(u.data))
    nv = float(np.linalg.norm(v.data))
    if nu == 0.0 or nv == 0.0:
        raise DegenerateVectorError("cosine similarity of a zero-norm vector is undefined")
    return div(dot(u, v), mul(norm(u), norm(v)))


def rowwise_cosine(a, b) -> Tensor:
    """Cosine similarity per row of two equally shaped matrices -> vector."""
    a = _wrap(a)
    b = _wrap(b, like=a)
    na = np.linalg.norm(a.data, axis=1)
    nb = np.linalg.norm(b.data, axis=1)
    bad = np.flatnonzero((na == 0.0) | (nb == 0.0))
    if bad.size:
        raise DegenerateVectorError(f"zero-norm representation at row {int(bad[0])}")
    num = tsum(mul(a, b), axis=1)
    den = mul(sqrt(tsum(mul(a, a), axis=1)), sqrt(tsum(mul(b, b), axis=1)))
    return div(num, den)


def lstm_cell_step(x, h_cat, c, w_input, w_hidden, bias) -> tuple[Tensor, Tensor]:
    """One step of a standard four-gate LSTM cell.

    The recurrent input ``h_cat`` may have a different width than the
    hidden state (here: a concatenation of the previous hidden state with
    a conditioning vector). Gate weights are stacked along the output
    axis in the order input, forget, candidate, output:

        w_input:  (4h, n_in)   applied to x
        w_hidden: (4h, n_rec)  applied to h_cat
        bias:     (4h,)

    Accepts single vectors or row-batched matrices; returns (h', c').
    """
    x = _wrap(x)
    h_cat = _wrap(h_cat, like=x)
    c = _wrap(c, like=x)
    w_input = _wrap(w_input, like=x)
    w_hidden = _wrap(w_hidden, like=x)
    bias = _wrap(bias, like=x)

    four_h = w_input.data.shape[0]
    if four_h % 4 != 0:
        raise ShapeError(f"stacked gate dimension {four_h} is not a multiple of 4")
    h_size = four_h // 4
    if c.data.shape[-1] != h_size:
        raise ShapeError(f"cell state width {c.data.shape[-1]} != hidden size {h_size}")

    pre = add(affine(w_input, x), affine(w_hidden, h_cat, bias))
    axis = pre.data.ndim - 1
    gate_in = sigmoid(narrow(pre, axis, 0, h_size))
    gate_forget = sigmoid(narrow(pre, axis, h_size, h_size))
    candidate = tanh(narrow(pre, axis, 2 * h_size, h_size))
    gate_out = sigmoid(narrow(pre, axis, 3 * h_size, h_size))

    c_next = add(mul(gate_forget, c), mul(gate_in, candidate))
    h_next = mul(gate_out, tanh(c_next))
    return h_next, c_next

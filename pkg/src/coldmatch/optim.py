"""Adam optimizer and a finite-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import NumericError, ShapeError
from .tensor import GradTape, Tensor


@dataclass
class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor], learning_rate: float = 1e-3,
                   beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        state = cls(learning_rate=learning_rate, beta1=beta1, beta2=beta2, eps=eps)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray],
              state: AdamState) -> Mapping[str, Tensor]:
    """Bias-corrected Adam update, applied in place to ``params``.

    Must not run while a tape from the same parameters is still pending:
    the update mutates the parameter arrays.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        if name not in grads:
            raise ShapeError(f"no gradient supplied for parameter group '{name}'")
        g = grads[name]
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for '{name}'")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter group '{name}'")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data -= state.learning_rate * update.astype(p.data.dtype, copy=False)
    return params


def grad_check(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor],
               eps: float = 1e-5) -> dict[str, float]:
    """Compare tape gradients of ``loss_fn`` against central differences.

    ``loss_fn`` must be deterministic and must read parameter values from
    ``params`` at call time. Returns, per parameter group, the relative
    error  max_i |fd_i - tape_i| / (max|fd| + max|tape| + 1e-12).
    Requires 64-bit parameters; finite differences are too noisy at 32.
    """
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise NumericError(f"grad_check requires float64 parameters, '{name}' is {p.data.dtype}")

    with GradTape() as tape:
        loss = loss_fn()
    analytic = tape.gradient(loss, list(params.values()))

    report: dict[str, float] = {}
    for (name, p), ana in zip(params.items(), analytic):
        flat = p.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn().item()
            flat[i] = orig - eps
            down = loss_fn().item()
            flat[i] = orig
            fd[i] = (up - down) / (2.0 * eps)
        fd = fd.reshape(p.data.shape)
        scale = np.abs(fd).max() + np.abs(ana).max() + 1e-12
        report[name] = float(np.abs(fd - ana).max() / scale)
    return report

"""Adam optimizer and the cosine-annealing learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidSchedule, ShapeMismatch
from .engine import Tensor


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(params: list[Tensor], grads: list[np.ndarray],
              state: AdamState) -> None:
    """One bias-corrected Adam update, applied in place."""
    if len(params) != len(grads):
        raise ShapeMismatch("params and grads length mismatch")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.data.shape:
            raise ShapeMismatch(
                f"grad shape {g.shape} != param shape {p.data.shape}")
        m = state.m.get(i)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[i] = m
            state.v[i] = np.zeros_like(p.data)
        v = state.v[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(
            p.data.dtype, copy=False)


def cosine_anneal(lr0: float, eta_min: float, epoch: int,
                  total_epochs: int) -> float:
    """Single-cycle cosine decay from lr0 at epoch 0 to eta_min at the end."""
    if total_epochs < 1:
        raise InvalidSchedule("total_epochs must be >= 1")
    if not (0 <= epoch <= total_epochs):
        raise InvalidSchedule(
            f"epoch {epoch} outside [0, {total_epochs}]")
    return float(eta_min + 0.5 * (lr0 - eta_min) * (
        1.0 + np.cos(np.pi * epoch / total_epochs)))

"""Classification losses: cross-entropy and focal loss.

Focal loss with focusing parameter 0 and no class weights delegates to
cross_entropy, so the two are bitwise identical in that configuration.
"""

from __future__ import annotations

import numpy as np

from ..errors import LabelOutOfRange
from .engine import Tensor


def _check_labels(logits: Tensor, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2:
        raise LabelOutOfRange(f"expected [N, C] logits, got {logits.shape}")
    n, c = logits.data.shape
    if labels.shape != (n,):
        raise LabelOutOfRange(f"labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise LabelOutOfRange(
            f"labels must lie in [0, {c}), got range "
            f"[{labels.min()}, {labels.max()}]")
    return labels


def _log_softmax_stats(z: np.ndarray, labels: np.ndarray):
    m = z.max(axis=1, keepdims=True)
    shifted = z - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - lse
    nll = -log_probs[np.arange(z.shape[0]), labels]
    probs = np.exp(log_probs)
    return nll, probs


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    labels = _check_labels(logits, labels)
    z = logits.data
    n = z.shape[0]
    nll, probs = _log_softmax_stats(z, labels)
    loss = nll.mean()

    def backward(g):
        grad = probs.copy()
        grad[np.arange(n), labels] -= 1.0
        return (g * grad / n,)

    return Tensor(np.asarray(loss, dtype=z.dtype), _parents=(logits,),
                  _backward=backward)


def focal_loss(logits: Tensor, labels: np.ndarray, gamma_f: float = 2.0,
               class_weights: np.ndarray | None = None) -> Tensor:
    """Mean of w * (1 - p_t)^gamma_f * (-log p_t) over the batch."""
    if gamma_f < 0:
        raise LabelOutOfRange("focusing parameter gamma_f must be >= 0")
    if gamma_f == 0.0 and class_weights is None:
        return cross_entropy(logits, labels)
    labels = _check_labels(logits, labels)
    z = logits.data
    n = z.shape[0]
    nll, probs = _log_softmax_stats(z, labels)
    p_t = probs[np.arange(n), labels]
    one_minus = 1.0 - p_t
    factor = one_minus ** gamma_f
    if class_weights is not None:
        class_weights = np.asarray(class_weights, dtype=z.dtype)
        if class_weights.shape != (z.shape[1],):
            raise LabelOutOfRange(
                f"class_weights shape {class_weights.shape} != ({z.shape[1]},)")
        w = class_weights[labels]
    else:
        w = np.ones_like(p_t)
    loss = (w * factor * nll).mean()

    def backward(g):
        dnll = probs.copy()
        dnll[np.arange(n), labels] -= 1.0  # d(nll_i)/d(z_ij)
        # d/dz of (1-p)^gamma * nll, using dp/dz = -p * dnll/dz.
        term = np.zeros_like(p_t)
        mask = one_minus > 0
        if gamma_f > 0:
            term[mask] = gamma_f * one_minus[mask] ** (gamma_f - 1.0)
        coeff = w * (term * p_t * nll + factor)
        return (g * coeff[:, None] * dnll / n,)

    return Tensor(np.asarray(loss, dtype=z.dtype), _parents=(logits,),
                  _backward=backward)

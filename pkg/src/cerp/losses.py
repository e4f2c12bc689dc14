"""Ranking loss, pruning regularizer, and the joint-loss schedule.

The ranking term is pairwise BPR, -ln sigmoid(y_pos - y_neg), evaluated in
the stable softplus form. The pruning regularizer rewards dense composed
embeddings: for each embedding in the batch it subtracts
||tanh(eta * e)||^2, which with a large temperature eta is a smooth count
of the nonzero entries. The joint loss is bpr + gamma_t * regularizer with
gamma halved after every pruning epoch.
"""

from dataclasses import dataclass

import numpy as np

from cerp.numerics import sigmoid

__all__ = ["LossConfig", "bpr_loss", "bpr_terms", "prune_regularizer", "gamma_at_epoch", "total_loss"]


@dataclass(frozen=True)
class LossConfig:
    gamma0: float
    eta: float = 100.0
    gamma_decay: bool = True

    def __post_init__(self):
        if not 0.0 <= self.gamma0 <= 1.0:
            raise ValueError("gamma0 must lie in [0, 1]")
        if self.eta <= 0:
            raise ValueError("eta must be positive")


def bpr_terms(x: np.ndarray):
    """Per-triplet BPR losses and d/dx for score margins x = y_pos - y_neg."""
    x = np.asarray(x, dtype=np.float64)
    loss = np.logaddexp(0.0, -x)
    dx = -sigmoid(-x)
    return loss, dx


def bpr_loss(y_pos: float, y_neg: float):
    """Scalar BPR loss and its gradients w.r.t. the two scores."""
    loss, dx = bpr_terms(np.float64(y_pos) - np.float64(y_neg))
    return float(loss), float(dx), float(-dx)


def prune_regularizer(embeddings: np.ndarray, eta: float):
    """Smooth negative nonzero-count of a batch of embeddings.

    Returns (value, gradient) where value = -sum tanh(eta*e)^2 over every
    entry and gradient is the per-entry derivative
    -2 * eta * tanh(eta*e) * (1 - tanh(eta*e)^2).
    """
    e = np.asarray(embeddings, dtype=np.float64)
    t = np.tanh(eta * e)
    value = -float(np.sum(t * t))
    grad = -2.0 * eta * t * (1.0 - t * t)
    return value, grad


def gamma_at_epoch(cfg: LossConfig, epoch: int) -> float:
    """Regularizer weight during 0-based pruning epoch ``epoch``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if not cfg.gamma_decay:
        return cfg.gamma0
    return cfg.gamma0 * 2.0 ** (-epoch)


def total_loss(bpr_sum: float, reg: float, gamma: float) -> float:
    """Joint objective for one batch: summed BPR plus weighted regularizer."""
    return bpr_sum + gamma * reg

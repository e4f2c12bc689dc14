"""Routing of loss gradients into codebook values and soft thresholds.

The prune operator sits inside the computation graph, so upstream gradients
with respect to a pruned row split into two subgradient streams:

    d_values     += g                     where the pruned entry is nonzero
    d_thresholds += -sigma'(s) * g * sign(v)   (same support)

Pruned-out entries receive exactly zero gradient on both streams.
``batch_backward`` assembles the full joint-loss gradient for a triplet
batch: the BPR path through the scorer plus gamma times the regularizer
path, streamed per occurrence so that accumulating a batch in pieces
reproduces the full-batch codebook gradients bit-exactly.
"""

from dataclasses import dataclass

import numpy as np

from cerp import kernels
from cerp.codebooks import Codebook
from cerp.losses import bpr_terms, prune_regularizer
from cerp.numerics import sigmoid
from cerp.scorers import DotScorer

__all__ = ["BatchGrads", "LossParts", "accumulate_prune_subgrads", "batch_backward", "triplet_index_table"]


@dataclass
class LossParts:
    total: float
    bpr: float
    reg: float


class BatchGrads:
    """Accumulated gradients for both codebooks and the scorer parameters."""

    def __init__(self, bucket_size: int, dim: int, scorer):
        shape = (bucket_size, dim)
        self.d_values_p = np.zeros(shape)
        self.d_thresholds_p = np.zeros(shape)
        self.d_values_q = np.zeros(shape)
        self.d_thresholds_q = np.zeros(shape)
        self.scorer_grads = [np.zeros_like(p) for p in scorer.params]
        self._touched_p = np.zeros(bucket_size, dtype=bool)
        self._touched_q = np.zeros(bucket_size, dtype=bool)

    @property
    def touched_rows_p(self) -> np.ndarray:
        return np.flatnonzero(self._touched_p)

    @property
    def touched_rows_q(self) -> np.ndarray:
        return np.flatnonzero(self._touched_q)

    def mark_touched(self, rows_p, rows_q):
        self._touched_p[rows_p] = True
        self._touched_q[rows_q] = True


def triplet_index_table(spec, num_users: int, users, pos_items, neg_items) -> np.ndarray:
    """Codebook row pairs for a triplet batch: columns (u_kp, u_kq, p_kp, p_kq, n_kp, n_kq).

    Items occupy entity ids [num_users, num_users + num_items).
    """
    from cerp.hashing import hash_entities

    users = np.asarray(users, dtype=np.int64)
    pos = np.asarray(pos_items, dtype=np.int64) + num_users
    neg = np.asarray(neg_items, dtype=np.int64) + num_users
    out = np.empty((users.size, 6), dtype=np.int64)
    out[:, 0], out[:, 1] = hash_entities(spec, users)
    out[:, 2], out[:, 3] = hash_entities(spec, pos)
    out[:, 4], out[:, 5] = hash_entities(spec, neg)
    return np.ascontiguousarray(out)


def _prune_rows(cb: Codebook, rows: np.ndarray):
    """Pruned rows plus the pieces needed for the subgradient streams."""
    v = cb.values[rows]
    th = sigmoid(cb.thresholds[rows])
    pruned = np.sign(v) * np.maximum(np.abs(v) - th, 0.0)
    sig_prime = th * (1.0 - th)
    return pruned, sig_prime


def accumulate_prune_subgrads(cb: Codebook, row: int, g: np.ndarray, d_values: np.ndarray, d_thresholds: np.ndarray):
    """Add one row's upstream gradient into the value/threshold streams."""
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (cb.dim,):
        raise ValueError(f"upstream gradient must have shape ({cb.dim},)")
    pruned, sig_prime = _prune_rows(cb, np.array([row]))
    kept_sign = np.sign(pruned[0])
    d_values[row] += g * (kept_sign != 0)
    d_thresholds[row] += -sig_prime[0] * g * kept_sign


def batch_backward(
    p_cb: Codebook,
    q_cb: Codebook,
    scorer,
    idx: np.ndarray,
    eta: float,
    gamma: float,
    grads: BatchGrads | None = None,
    backend: str = "auto",
    use_kernel: bool = True,
) -> tuple[BatchGrads, LossParts]:
    """Joint-loss forward/backward over a triplet batch.

    ``idx`` is the (B, 6) row table from :func:`triplet_index_table`. When
    ``grads`` is given, contributions accumulate into it (codebook streams
    are bit-exact under batch splitting). The dot scorer runs through the
    selected hot-kernel backend unless ``use_kernel`` is False.
    """
    if grads is None:
        grads = BatchGrads(p_cb.num_rows, p_cb.dim, scorer)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    grads.mark_touched(idx[:, (0, 2, 4)].ravel(), idx[:, (1, 3, 5)].ravel())

    if isinstance(scorer, DotScorer) and use_kernel:
        total, bpr, reg = kernels.dot_triplet_step(
            p_cb.values, p_cb.thresholds, q_cb.values, q_cb.thresholds,
            idx, eta, gamma,
            grads.d_values_p, grads.d_thresholds_p, grads.d_values_q, grads.d_thresholds_q,
            backend=backend,
        )
        return grads, LossParts(total, bpr, reg)

    kp = idx[:, (0, 2, 4)]
    kq = idx[:, (1, 3, 5)]
    p_hat, sp_prime = _prune_rows(p_cb, kp.ravel())
    q_hat, sq_prime = _prune_rows(q_cb, kq.ravel())
    B = idx.shape[0]
    d = p_cb.dim
    e = (p_hat + q_hat).reshape(B, 3, d)

    y_pos, cache_pos = scorer.forward(e[:, 0], e[:, 1])
    y_neg, cache_neg = scorer.forward(e[:, 0], e[:, 2])
    losses, dx = bpr_terms(y_pos - y_neg)
    bpr = float(np.sum(losses))

    deu_p, dep, pg_pos = scorer.backward(cache_pos, dx)
    deu_n, den, pg_neg = scorer.backward(cache_neg, -dx)
    ge = np.empty_like(e)
    ge[:, 0] = deu_p + deu_n
    ge[:, 1] = dep
    ge[:, 2] = den
    for acc, ga, gb in zip(grads.scorer_grads, pg_pos, pg_neg):
        acc += ga + gb

    reg, g_reg = prune_regularizer(e, eta)
    ge += gamma * g_reg

    ge_flat = ge.reshape(3 * B, d)
    rows_p = kp.reshape(3 * B)
    rows_q = kq.reshape(3 * B)
    np.add.at(grads.d_values_p, rows_p, np.where(p_hat != 0, ge_flat, 0.0))
    np.add.at(grads.d_thresholds_p, rows_p, -sp_prime * ge_flat * np.sign(p_hat))
    np.add.at(grads.d_values_q, rows_q, np.where(q_hat != 0, ge_flat, 0.0))
    np.add.at(grads.d_thresholds_q, rows_q, -sq_prime * ge_flat * np.sign(q_hat))

    return grads, LossParts(bpr + gamma * reg, bpr, reg)

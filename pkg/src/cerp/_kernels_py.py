"""Pure-numpy fallback for the fused dot-scorer triplet kernel.

Semantics match ``cerp._kernels`` (the compiled extension): per-slot
gradient accumulation streams in triplet-major, (user, pos, neg) order via
``np.add.at``, so accumulating a batch in two pieces is bit-identical to
one call over the whole batch.
"""

import numpy as np

from cerp.numerics import sigmoid

__all__ = ["dot_triplet_step"]


def dot_triplet_step(P, Sp, Q, Sq, idx, eta, gamma, dP, dSp, dQ, dSq):
    """Forward + backward of one triplet batch with the dot-product scorer.

    Returns (total_loss, bpr_loss, reg_loss); gradients are accumulated
    into the four (b, d) tables in place.
    """
    kp = idx[:, (0, 2, 4)]
    kq = idx[:, (1, 3, 5)]

    vp = P[kp]
    tp = sigmoid(Sp[kp])
    p_hat = np.sign(vp) * np.maximum(np.abs(vp) - tp, 0.0)
    vq = Q[kq]
    tq = sigmoid(Sq[kq])
    q_hat = np.sign(vq) * np.maximum(np.abs(vq) - tq, 0.0)
    e = p_hat + q_hat  # (B, 3, d): user, pos, neg embeddings

    y_pos = np.einsum("bd,bd->b", e[:, 0], e[:, 1])
    y_neg = np.einsum("bd,bd->b", e[:, 0], e[:, 2])
    x = y_pos - y_neg
    bpr = float(np.sum(np.logaddexp(0.0, -x)))
    gx = -sigmoid(-x)[:, None]

    ge = np.empty_like(e)
    ge[:, 0] = gx * (e[:, 1] - e[:, 2])
    ge[:, 1] = gx * e[:, 0]
    ge[:, 2] = -gx * e[:, 0]

    t = np.tanh(eta * e)
    reg = -float(np.sum(t * t))
    ge += gamma * (-2.0 * eta) * t * (1.0 - t * t)

    n = 3 * idx.shape[0]
    d = P.shape[1]
    rows_p = kp.reshape(n)
    rows_q = kq.reshape(n)
    np.add.at(dP, rows_p, np.where(p_hat != 0, ge, 0.0).reshape(n, d))
    np.add.at(dSp, rows_p, (-tp * (1.0 - tp) * ge * np.sign(p_hat)).reshape(n, d))
    np.add.at(dQ, rows_q, np.where(q_hat != 0, ge, 0.0).reshape(n, d))
    np.add.at(dSq, rows_q, (-tq * (1.0 - tq) * ge * np.sign(q_hat)).reshape(n, d))

    return bpr + gamma * reg, bpr, reg

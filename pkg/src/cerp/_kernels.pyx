# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernel: fused dot-scorer triplet forward/backward."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, log1p, tanh

cnp.import_array()


cdef inline double _sigmoid(double x) nogil:
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    cdef double e = exp(x)
    return e / (1.0 + e)


cdef inline double _softplus_of_neg(double x) nogil:
    # ln(1 + e^(-x)), stable for large |x|
    if x > 0.0:
        return log1p(exp(-x))
    return -x + log1p(exp(x))


def dot_triplet_step(
    double[:, ::1] P, double[:, ::1] Sp,
    double[:, ::1] Q, double[:, ::1] Sq,
    long long[:, ::1] idx,
    double eta, double gamma,
    double[:, ::1] dP, double[:, ::1] dSp,
    double[:, ::1] dQ, double[:, ::1] dSq,
):
    """Forward + backward of one triplet batch with the dot-product scorer.

    ``idx`` has one row per (user, positive, negative) triplet holding the
    codebook row pairs: u_kp, u_kq, pos_kp, pos_kq, neg_kp, neg_kq. Pruned
    rows are recomputed from the current tables, embeddings composed by sum
    pooling, ranking loss and the complementarity regularizer evaluated, and
    gradients scattered into the four accumulator tables (streamed per
    triplet in u, pos, neg order, so accumulation over two half batches is
    bit-identical to one full batch).

    Returns (total_loss, bpr_loss, reg_loss) where
    total = bpr + gamma * reg.
    """
    cdef Py_ssize_t B = idx.shape[0]
    cdef Py_ssize_t d = P.shape[1]
    cdef Py_ssize_t t, role, j
    cdef long long rp, rq

    buf = np.empty((7, 3, d), dtype=np.float64)
    cdef double[:, :, ::1] w = buf
    # w[0]=p_hat, w[1]=q_hat, w[2]=e, w[3]=ge,
    # w[4]=sign_p*kept_p, w[5]=sign_q*kept_q, w[6] unused scratch
    sig_buf = np.empty((2, 3, d), dtype=np.float64)
    cdef double[:, :, ::1] sig = sig_buf  # sigma'(s) per side

    cdef double bpr_sum = 0.0
    cdef double reg_sum = 0.0
    cdef double v, th, cut, sgn, ypos, yneg, x, gx, te, e
    cdef long long rows_p[3]
    cdef long long rows_q[3]

    with nogil:
        for t in range(B):
            rows_p[0] = idx[t, 0]; rows_q[0] = idx[t, 1]
            rows_p[1] = idx[t, 2]; rows_q[1] = idx[t, 3]
            rows_p[2] = idx[t, 4]; rows_q[2] = idx[t, 5]

            for role in range(3):
                rp = rows_p[role]
                rq = rows_q[role]
                for j in range(d):
                    v = P[rp, j]
                    th = _sigmoid(Sp[rp, j])
                    sig[0, role, j] = th * (1.0 - th)
                    cut = fabs(v) - th
                    if cut > 0.0:
                        sgn = 1.0 if v > 0.0 else (-1.0 if v < 0.0 else 0.0)
                        w[0, role, j] = sgn * cut
                        w[4, role, j] = sgn
                    else:
                        w[0, role, j] = 0.0
                        w[4, role, j] = 0.0

                    v = Q[rq, j]
                    th = _sigmoid(Sq[rq, j])
                    sig[1, role, j] = th * (1.0 - th)
                    cut = fabs(v) - th
                    if cut > 0.0:
                        sgn = 1.0 if v > 0.0 else (-1.0 if v < 0.0 else 0.0)
                        w[1, role, j] = sgn * cut
                        w[5, role, j] = sgn
                    else:
                        w[1, role, j] = 0.0
                        w[5, role, j] = 0.0

                    w[2, role, j] = w[0, role, j] + w[1, role, j]

            ypos = 0.0
            yneg = 0.0
            for j in range(d):
                ypos += w[2, 0, j] * w[2, 1, j]
                yneg += w[2, 0, j] * w[2, 2, j]
            x = ypos - yneg
            bpr_sum += _softplus_of_neg(x)
            gx = -_sigmoid(-x)

            for j in range(d):
                w[3, 0, j] = gx * (w[2, 1, j] - w[2, 2, j])
                w[3, 1, j] = gx * w[2, 0, j]
                w[3, 2, j] = -gx * w[2, 0, j]

            for role in range(3):
                for j in range(d):
                    e = w[2, role, j]
                    te = tanh(eta * e)
                    reg_sum -= te * te
                    w[3, role, j] += gamma * (-2.0 * eta * te * (1.0 - te * te))

            for role in range(3):
                rp = rows_p[role]
                rq = rows_q[role]
                for j in range(d):
                    if w[4, role, j] != 0.0:
                        dP[rp, j] += w[3, role, j]
                        dSp[rp, j] += -sig[0, role, j] * w[3, role, j] * w[4, role, j]
                    if w[5, role, j] != 0.0:
                        dQ[rq, j] += w[3, role, j]
                        dSq[rq, j] += -sig[1, role, j] * w[3, role, j] * w[5, role, j]

    return bpr_sum + gamma * reg_sum, bpr_sum, reg_sum

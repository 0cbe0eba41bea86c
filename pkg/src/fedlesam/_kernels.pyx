# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled loss/gradient kernels for the dense desk-scale models.

Parameter layout (flat, row-major):
    hidden > 0 : W1 (in_dim x hidden), b1 (hidden), W2 (hidden x n_classes), b2 (n_classes)
    hidden == 0: W (in_dim x n_classes), b (n_classes)

The loss is the mean softmax cross-entropy over the batch.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, tanh

cnp.import_array()


def dense_loss_grad(const double[::1] params,
                    const double[:, ::1] X,
                    const cnp.int64_t[::1] y,
                    int in_dim, int hidden, int n_classes,
                    double[::1] grad=None):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t s, j, h, c
    cdef bint want_grad = grad is not None
    cdef int width = hidden if hidden > 0 else in_dim
    cdef Py_ssize_t off_w2, off_b2
    cdef double m, z, total, target, loss = 0.0, inv_n = 1.0 / n
    cdef double[::1] act = np.empty(width, dtype=np.float64)
    cdef double[::1] logits = np.empty(n_classes, dtype=np.float64)
    cdef double[::1] dact = np.empty(width, dtype=np.float64)

    if hidden > 0:
        off_w2 = in_dim * hidden + hidden
    else:
        off_w2 = 0
    off_b2 = off_w2 + width * n_classes

    if want_grad:
        for j in range(grad.shape[0]):
            grad[j] = 0.0

    for s in range(n):
        # hidden activations (or raw features for the linear model)
        # loops keep the weight index contiguous in the innermost loop
        if hidden > 0:
            for h in range(hidden):
                act[h] = params[in_dim * hidden + h]
            for j in range(in_dim):
                z = X[s, j]
                for h in range(hidden):
                    act[h] += z * params[j * hidden + h]
            for h in range(hidden):
                act[h] = tanh(act[h])
        else:
            for j in range(in_dim):
                act[j] = X[s, j]

        for c in range(n_classes):
            logits[c] = params[off_b2 + c]
        for h in range(width):
            z = act[h]
            for c in range(n_classes):
                logits[c] += z * params[off_w2 + h * n_classes + c]

        target = logits[y[s]]
        m = logits[0]
        for c in range(1, n_classes):
            if logits[c] > m:
                m = logits[c]
        total = 0.0
        for c in range(n_classes):
            logits[c] = exp(logits[c] - m)
            total += logits[c]
        loss += log(total) + m - target

        if not want_grad:
            continue

        # logits now holds softmax numerators; turn into dL/dlogits
        for c in range(n_classes):
            logits[c] = logits[c] / total
        logits[y[s]] -= 1.0

        for h in range(width):
            z = 0.0
            for c in range(n_classes):
                grad[off_w2 + h * n_classes + c] += act[h] * logits[c] * inv_n
                z += params[off_w2 + h * n_classes + c] * logits[c]
            dact[h] = z
        for c in range(n_classes):
            grad[off_b2 + c] += logits[c] * inv_n

        if hidden > 0:
            for h in range(hidden):
                dact[h] = dact[h] * (1.0 - act[h] * act[h]) * inv_n
                grad[in_dim * hidden + h] += dact[h]
            for j in range(in_dim):
                z = X[s, j]
                for h in range(hidden):
                    grad[j * hidden + h] += z * dact[h]

    return loss * inv_n

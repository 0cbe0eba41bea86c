"""Pure-numpy twin of the compiled kernels in ``_kernels.pyx``.

Same signature and parameter layout; used when the extension is not built
or when ``FEDLESAM_PURE_PYTHON=1`` is set.
"""

from __future__ import annotations

import numpy as np


def _unpack(params, in_dim, hidden, n_classes):
    if hidden > 0:
        o1 = in_dim * hidden
        o2 = o1 + hidden
        o3 = o2 + hidden * n_classes
        return (
            params[:o1].reshape(in_dim, hidden),
            params[o1:o2],
            params[o2:o3].reshape(hidden, n_classes),
            params[o3:o3 + n_classes],
        )
    o1 = in_dim * n_classes
    return None, None, params[:o1].reshape(in_dim, n_classes), params[o1:o1 + n_classes]


def dense_loss_grad(params, X, y, in_dim, hidden, n_classes, grad=None):
    W1, b1, W2, b2 = _unpack(params, in_dim, hidden, n_classes)
    n = X.shape[0]
    act = np.tanh(X @ W1 + b1) if hidden > 0 else X
    logits = act @ W2 + b2
    m = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - m)
    total = ex.sum(axis=1)
    rows = np.arange(n)
    loss = float(np.mean(np.log(total) + m[:, 0] - logits[rows, y]))
    if grad is None:
        return loss

    dlog = ex / total[:, None]
    dlog[rows, y] -= 1.0
    dlog /= n
    gW2 = act.T @ dlog
    gb2 = dlog.sum(axis=0)
    if hidden > 0:
        dz = (dlog @ W2.T) * (1.0 - act * act)
        parts = [(X.T @ dz).ravel(), dz.sum(axis=0), gW2.ravel(), gb2]
    else:
        parts = [gW2.ravel(), gb2]
    grad[:] = np.concatenate(parts)
    return loss

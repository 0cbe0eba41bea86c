"""Backend selection for the dense-model kernels.

The compiled extension is preferred; the numpy implementation is used when
the extension is missing or ``FEDLESAM_PURE_PYTHON`` is set to a truthy value.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
dense_loss_grad = _kernels_py.dense_loss_grad

if os.environ.get("FEDLESAM_PURE_PYTHON", "").lower() not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        dense_loss_grad = _compiled.dense_loss_grad
        BACKEND = "cython"

__all__ = ["BACKEND", "dense_loss_grad"]

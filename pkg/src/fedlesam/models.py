"""Desk-scale differentiable models.

Three model kinds share one flat ``ParamVector`` representation (a 1-D float64
numpy array):

* ``quadratic``: ``F(w) = mean_j 1/2 (w - c_j)^T A_j (w - c_j)`` over the terms of
  a :class:`QuadBatch`. No architecture; the terms come from a
  :class:`~fedlesam.data.QuadraticProblem`.
* ``linear``: softmax regression, layout ``W (in_dim x n_classes), b``.
* ``mlp``: one tanh hidden layer, layout ``W1, b1, W2, b2``.

Classification losses are mean softmax cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from ._kernels_py import _unpack


class ContractError(ValueError):
    """Raised when an operation's preconditions are violated."""


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    in_dim: int = 0
    n_classes: int = 0
    hidden_dim: int = 0
    dim: int = 0

    def __post_init__(self):
        if self.kind not in ("quadratic", "linear", "mlp"):
            raise ContractError(f"unknown model kind {self.kind!r}")
        if self.kind == "quadratic" and self.dim < 1:
            raise ContractError("quadratic model needs dim >= 1")
        if self.kind in ("linear", "mlp") and (self.in_dim < 1 or self.n_classes < 2):
            raise ContractError("classifier needs in_dim >= 1 and n_classes >= 2")
        if self.kind == "mlp" and self.hidden_dim < 1:
            raise ContractError("mlp needs hidden_dim >= 1")

    @classmethod
    def quadratic(cls, dim: int) -> "ModelSpec":
        return cls("quadratic", dim=dim)

    @classmethod
    def linear(cls, in_dim: int, n_classes: int) -> "ModelSpec":
        return cls("linear", in_dim=in_dim, n_classes=n_classes)

    @classmethod
    def mlp(cls, in_dim: int, hidden_dim: int, n_classes: int) -> "ModelSpec":
        return cls("mlp", in_dim=in_dim, n_classes=n_classes, hidden_dim=hidden_dim)

    @property
    def n_params(self) -> int:
        if self.kind == "quadratic":
            return self.dim
        if self.kind == "linear":
            return self.in_dim * self.n_classes + self.n_classes
        h = self.hidden_dim
        return self.in_dim * h + h + h * self.n_classes + self.n_classes

    @property
    def is_classifier(self) -> bool:
        return self.kind != "quadratic"

    @property
    def _hidden(self) -> int:
        return self.hidden_dim if self.kind == "mlp" else 0


@dataclass(frozen=True)
class Batch:
    """Labelled samples for the classifier models."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if feats.ndim != 2 or labels.ndim != 1:
            raise ContractError("features must be 2-D and labels 1-D")
        if feats.shape[0] == 0 or feats.shape[0] != labels.shape[0]:
            raise ContractError("batch must be non-empty with one label per row")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class QuadBatch:
    """Quadratic terms ``(A_j, c_j)``; the loss is their mean."""

    A: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        A = np.ascontiguousarray(self.A, dtype=np.float64)
        c = np.ascontiguousarray(self.c, dtype=np.float64)
        if A.ndim == 2:
            A = A[None]
        if c.ndim == 1:
            c = c[None]
        if A.shape[0] == 0 or A.shape[0] != c.shape[0] or A.shape[1:] != (c.shape[1], c.shape[1]):
            raise ContractError("QuadBatch needs matching (n, d, d) and (n, d) arrays")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "c", c)

    def __len__(self) -> int:
        return self.c.shape[0]


def _check(spec: ModelSpec, params: np.ndarray, batch) -> np.ndarray:
    params = np.ascontiguousarray(params, dtype=np.float64)
    if params.ndim != 1 or params.shape[0] != spec.n_params:
        raise ContractError(
            f"params has shape {params.shape}, expected ({spec.n_params},) for {spec.kind}"
        )
    if spec.kind == "quadratic":
        if not isinstance(batch, QuadBatch) or batch.c.shape[1] != spec.dim:
            raise ContractError("quadratic model needs a QuadBatch of matching dim")
    else:
        if not isinstance(batch, Batch) or batch.features.shape[1] != spec.in_dim:
            raise ContractError("classifier needs a Batch with in_dim feature columns")
        if batch.labels.min() < 0 or batch.labels.max() >= spec.n_classes:
            raise ContractError("labels out of range for n_classes")
    return params


def init_params(spec: ModelSpec, seed: int, scale: float = 0.1) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, scale, size=spec.n_params)


def loss_and_grad(spec: ModelSpec, params: np.ndarray, batch, want_grad: bool = True):
    params = _check(spec, params, batch)
    if spec.kind == "quadratic":
        diff = params[None, :] - batch.c
        Ad = np.einsum("nij,nj->ni", batch.A, diff)
        loss = 0.5 * float(np.mean(np.einsum("ni,ni->n", diff, Ad)))
        return loss, (Ad.mean(axis=0) if want_grad else None)
    grad = np.empty(spec.n_params) if want_grad else None
    loss = kernels.dense_loss_grad(
        params, batch.features, batch.labels,
        spec.in_dim, spec._hidden, spec.n_classes, grad,
    )
    return float(loss), grad


def forward_loss(spec: ModelSpec, params: np.ndarray, batch) -> float:
    return loss_and_grad(spec, params, batch, want_grad=False)[0]


def gradient(spec: ModelSpec, params: np.ndarray, batch) -> np.ndarray:
    return loss_and_grad(spec, params, batch)[1]


def finite_diff_gradient(spec: ModelSpec, params: np.ndarray, batch, h: float = 1e-5) -> np.ndarray:
    """Central differences ``(F(w + h e_j) - F(w - h e_j)) / 2h`` per coordinate."""
    if not h > 0:
        raise ContractError("finite-difference step h must be positive")
    params = _check(spec, params, batch).copy()
    out = np.empty_like(params)
    for j in range(params.shape[0]):
        orig = params[j]
        params[j] = orig + h
        up = forward_loss(spec, params, batch)
        params[j] = orig - h
        down = forward_loss(spec, params, batch)
        params[j] = orig
        out[j] = (up - down) / (2.0 * h)
    return out


def logits(spec: ModelSpec, params: np.ndarray, features: np.ndarray) -> np.ndarray:
    if not spec.is_classifier:
        raise ContractError("quadratic model has no logits")
    params = np.asarray(params, dtype=np.float64)
    x = np.asarray(features, dtype=np.float64)
    if spec.kind == "mlp":
        W1, b1, W2, b2 = _unpack(params, spec.in_dim, spec.hidden_dim, spec.n_classes)
        x = np.tanh(x @ W1 + b1)
    else:
        _, _, W2, b2 = _unpack(params, spec.in_dim, 0, spec.n_classes)
    return x @ W2 + b2


class GradientOracle:
    """Counts gradient (backpropagation) evaluations made through it."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.calls = 0

    def __call__(self, params: np.ndarray, batch) -> np.ndarray:
        self.calls += 1
        return gradient(self.spec, params, batch)

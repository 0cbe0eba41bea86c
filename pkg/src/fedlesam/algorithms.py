"""Client-side local training for the FedAvg / SAM / LESAM family.

Every algorithm is a perturbation rule combined with a correction rule:

==================  ==============  ============
name                perturbation    correction
==================  ==============  ============
fedavg              none            none
fedsam              local           none
fedlesam            global          none
scaffold            none            scaffold
fedgamma            local           scaffold
fedlesam-s          global          scaffold
feddyn              none            dyn
fedlesam-d          global          dyn
==================  ==============  ============
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .models import ContractError, GradientOracle, ModelSpec

EPS_NORM = 1e-12

PERTURBATIONS = ("none", "local", "global")
CORRECTIONS = ("none", "scaffold", "dyn")

_NAMES = {
    ("none", "none"): "fedavg",
    ("local", "none"): "fedsam",
    ("global", "none"): "fedlesam",
    ("none", "scaffold"): "scaffold",
    ("local", "scaffold"): "fedgamma",
    ("global", "scaffold"): "fedlesam-s",
    ("none", "dyn"): "feddyn",
    ("global", "dyn"): "fedlesam-d",
}
ALGORITHMS = {name: key for key, name in _NAMES.items()}


@dataclass(frozen=True)
class PerturbationRule:
    kind: str = "none"
    rho: float = 0.0

    def __post_init__(self):
        if self.kind not in PERTURBATIONS:
            raise ContractError(f"unknown perturbation rule {self.kind!r}")
        if not (np.isfinite(self.rho) and self.rho >= 0):
            raise ContractError("rho must be finite and >= 0")


@dataclass(frozen=True)
class CorrectionRule:
    kind: str = "none"
    beta: float | None = None

    def __post_init__(self):
        if self.kind not in CORRECTIONS:
            raise ContractError(f"unknown correction rule {self.kind!r}")
        if self.kind == "dyn" and not (self.beta is not None and np.isfinite(self.beta) and self.beta > 0):
            raise ContractError("dyn correction needs a finite beta > 0")


@dataclass(frozen=True)
class AlgorithmSpec:
    perturbation: PerturbationRule
    correction: CorrectionRule

    def __post_init__(self):
        if (self.perturbation.kind, self.correction.kind) not in _NAMES:
            raise ContractError(
                f"no named algorithm combines {self.perturbation.kind!r} perturbation "
                f"with {self.correction.kind!r} correction"
            )

    @property
    def name(self) -> str:
        return _NAMES[(self.perturbation.kind, self.correction.kind)]

    @classmethod
    def from_name(cls, name: str, rho: float = 0.0, beta: float | None = None) -> "AlgorithmSpec":
        key = name.lower()
        if key not in ALGORITHMS:
            raise ContractError(f"unsupported algorithm {name!r}; choose from {sorted(ALGORITHMS)}")
        pert, corr = ALGORITHMS[key]
        return cls(
            PerturbationRule(pert, rho if pert != "none" else 0.0),
            CorrectionRule(corr, beta if corr == "dyn" else None),
        )


@dataclass
class ClientState:
    w_old: np.ndarray
    c_i: np.ndarray
    lam_i: np.ndarray

    @classmethod
    def zeros(cls, n_params: int) -> "ClientState":
        return cls(np.zeros(n_params), np.zeros(n_params), np.zeros(n_params))

    def copy(self) -> "ClientState":
        return ClientState(self.w_old.copy(), self.c_i.copy(), self.lam_i.copy())


@dataclass
class LocalTrace:
    """Per-step record of a local round, used by the drift diagnostics."""

    iterates: list = field(default_factory=list)    # w_{i,k}, k = 0..E-1
    directions: list = field(default_factory=list)  # unit perturbation directions


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n < EPS_NORM:
        return np.zeros_like(v)
    return v / n


def local_perturbation(grad: np.ndarray, rho: float) -> np.ndarray:
    """SAM ascent step ``rho * grad / ||grad||``; zero for a degenerate gradient."""
    if rho < 0:
        raise ContractError("rho must be >= 0")
    return rho * _unit(np.asarray(grad, dtype=np.float64))


def global_perturbation_estimate(w_old: np.ndarray, w_t: np.ndarray, rho: float) -> np.ndarray:
    """Estimated global ascent step ``rho * (w_old - w_t) / ||w_old - w_t||``."""
    w_old = np.asarray(w_old, dtype=np.float64)
    w_t = np.asarray(w_t, dtype=np.float64)
    if w_old.shape != w_t.shape:
        raise ContractError("w_old and w_t must have the same length")
    if rho < 0:
        raise ContractError("rho must be >= 0")
    return rho * _unit(w_old - w_t)


def gradient_eval_count(spec: AlgorithmSpec) -> int:
    """Backpropagations per local step."""
    return 2 if spec.perturbation.kind == "local" else 1


def local_round(spec: AlgorithmSpec, model: ModelSpec, w_t: np.ndarray, state: ClientState,
                server_control: np.ndarray, batches: Sequence, eta_l: float,
                oracle: GradientOracle | None = None, trace: LocalTrace | None = None):
    """Run ``E = len(batches)`` local steps from the received global model.

    Returns ``(w_final, new_state)``; ``state`` itself is not mutated. Pass an
    ``oracle`` to count gradient evaluations and a ``trace`` to record the
    iterates and unit perturbation directions.
    """
    if not eta_l > 0:
        raise ContractError("eta_l must be > 0")
    if len(batches) == 0:
        raise ContractError("local round needs at least one batch")
    w_t = np.asarray(w_t, dtype=np.float64)
    n = model.n_params
    if w_t.shape != (n,) or server_control.shape != (n,) or state.w_old.shape != (n,):
        raise ContractError("parameter, state and control lengths must match the model")
    grad = oracle if oracle is not None else GradientOracle(model)

    pert = spec.perturbation
    corr = spec.correction
    new = state.copy()
    rho = pert.rho

    fixed_delta = None
    fixed_dir = None
    if pert.kind == "global":
        fixed_dir = _unit(state.w_old - w_t)
        fixed_delta = rho * fixed_dir
    if corr.kind == "scaffold":
        # original Scaffold sign: w <- w - eta_l (g - C_i + C)
        drift_fix = state.c_i - server_control
    inv_beta = 1.0 / corr.beta if corr.kind == "dyn" else 0.0

    w = w_t.copy()
    for batch in batches:
        if trace is not None:
            trace.iterates.append(w.copy())
        if pert.kind == "none":
            g = grad(w, batch)
            direction = None
        elif pert.kind == "local":
            direction = _unit(grad(w, batch))
            g = grad(w + rho * direction if rho > 0 else w, batch)
        else:
            direction = fixed_dir
            g = grad(w + fixed_delta if rho > 0 else w, batch)
        if trace is not None:
            trace.directions.append(direction)

        if corr.kind == "none":
            w = w - eta_l * g
        elif corr.kind == "scaffold":
            w = w - eta_l * g + eta_l * drift_fix
        else:
            w = w - eta_l * g - eta_l * (state.lam_i + inv_beta * (w - w_t))

    steps = len(batches)
    if corr.kind == "scaffold":
        new.c_i = state.c_i - server_control + (w_t - w) / (eta_l * steps)
    elif corr.kind == "dyn":
        new.lam_i = state.lam_i - inv_beta * (w - w_t)
    if pert.kind == "global":
        new.w_old = w_t.copy()
    return w, new

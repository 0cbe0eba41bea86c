"""Diagnostics: global sharpness, perturbation drift, estimation error, loss surfaces."""

from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .algorithms import EPS_NORM, _unit, local_perturbation
from .models import ContractError, ModelSpec, forward_loss, gradient, logits

METRIC_COLUMNS = ("round", "train_loss", "test_acc", "grad_norm", "sharpness", "pd", "est_error", "eta_l")


@dataclass
class RoundMetrics:
    """One metrics row; ``None`` marks a value that was not computed."""

    round: int
    train_loss: float | None = None
    test_acc: float | None = None
    grad_norm: float | None = None
    sharpness: float | None = None
    pd: float | None = None
    est_error: float | None = None
    eta_l: float | None = None

    def as_row(self) -> list[str]:
        return ["" if v is None else (str(v) if isinstance(v, int) else repr(float(v))) for v in astuple(self)]


def metrics_csv(rows: Sequence[RoundMetrics]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for r in rows:
        writer.writerow(r.as_row())
    return buf.getvalue()


def write_metrics_csv(rows: Sequence[RoundMetrics], path) -> None:
    Path(path).write_text(metrics_csv(rows))


def read_metrics_csv(path) -> list[RoundMetrics]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        names = [f.name for f in fields(RoundMetrics)]
        for rec in reader:
            vals = {}
            for name, col in zip(names, METRIC_COLUMNS):
                raw = rec[col]
                if name == "round":
                    vals[name] = int(raw)
                else:
                    vals[name] = float(raw) if raw != "" else None
            out.append(RoundMetrics(**vals))
    return out


def global_sharpness(model: ModelSpec, w: np.ndarray, full_data, rho: float) -> float:
    """One-ascent-step sharpness surrogate ``F(w + rho g/||g||) - F(w)``."""
    if not rho > 0:
        raise ContractError("sharpness probe rho must be > 0")
    g = gradient(model, w, full_data)
    if np.linalg.norm(g) < EPS_NORM:
        return 0.0
    return forward_loss(model, w + local_perturbation(g, rho), full_data) - forward_loss(model, w, full_data)


def perturbation_drift(global_dirs: Sequence[np.ndarray], local_dirs: Sequence[Sequence[np.ndarray]]) -> float:
    """Mean half-distance between the global and local unit perturbation directions.

    ``global_dirs[k]`` is the virtual global direction at local step ``k`` and
    ``local_dirs[i][k]`` client ``i``'s direction at the same step.
    """
    K = len(local_dirs)
    E = len(global_dirs)
    if K == 0 or E == 0 or any(len(d) != E for d in local_dirs):
        raise ContractError("perturbation drift needs K >= 1 clients each with E global-aligned steps")
    total = 0.0
    for client in local_dirs:
        for g, d in zip(global_dirs, client):
            total += float(np.linalg.norm(g - d))
    return total / (2.0 * K * E)


def virtual_global_model(w_t: np.ndarray, client_models: Sequence[np.ndarray], eta_g: float) -> np.ndarray:
    w_t = np.asarray(w_t, dtype=np.float64)
    drift = np.mean([w_t - np.asarray(m) for m in client_models], axis=0)
    return w_t - eta_g * drift


def virtual_global_perturbation(model: ModelSpec, w_t: np.ndarray, client_models_at_k: Sequence[np.ndarray],
                                eta_g: float, full_data, rho: float) -> np.ndarray:
    w_g = virtual_global_model(w_t, client_models_at_k, eta_g)
    return local_perturbation(gradient(model, w_g, full_data), rho)


def estimation_error(w_prev: np.ndarray, w_cur: np.ndarray, model: ModelSpec, full_data) -> float | None:
    """Squared gap between the unit global update and the unit global gradient at ``w_cur``.

    Returns ``None`` when either direction is undefined.
    """
    step = np.asarray(w_prev, dtype=np.float64) - np.asarray(w_cur, dtype=np.float64)
    g = gradient(model, w_cur, full_data)
    ns, ng = np.linalg.norm(step), np.linalg.norm(g)
    if ns < EPS_NORM or ng < EPS_NORM:
        return None
    return float(np.sum((step / ns - g / ng) ** 2))


def _directions(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    d1 = _unit(rng.standard_normal(n))
    if n == 1:
        return d1, np.zeros(1)
    d2 = rng.standard_normal(n)
    d2 = _unit(d2 - (d2 @ d1) * d1)
    return d1, d2


def loss_surface_grid(model: ModelSpec, w: np.ndarray, full_data, resolution: int, extent: float,
                      seed: int) -> np.ndarray:
    """Loss on a ``resolution x resolution`` grid around ``w`` spanned by two random orthonormal directions.

    Rows are ``(a, b, loss)`` in row-major order (``a`` outer).
    """
    if resolution < 1 or resolution % 2 == 0:
        raise ContractError("resolution must be a positive odd integer")
    if not extent > 0:
        raise ContractError("extent must be > 0")
    w = np.asarray(w, dtype=np.float64)
    d1, d2 = _directions(w.shape[0], seed)
    ticks = np.linspace(-extent, extent, resolution) if resolution > 1 else np.zeros(1)
    rows = [(a, b, forward_loss(model, w + a * d1 + b * d2, full_data)) for a in ticks for b in ticks]
    return np.array(rows)


def write_surface_csv(grid: np.ndarray, path) -> None:
    lines = ["a,b,loss"] + [f"{a!r},{b!r},{l!r}" for a, b, l in grid.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def test_accuracy(model: ModelSpec, w: np.ndarray, test_data) -> float:
    if not model.is_classifier:
        raise ContractError("accuracy is undefined for the quadratic model")
    pred = np.argmax(logits(model, w, test_data.features), axis=1)  # ties -> lowest index
    return float(np.mean(pred == test_data.labels))


test_accuracy.__test__ = False  # keep pytest from collecting the import

"""Server-side round loop: sampling, aggregation, control/dual updates, metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .algorithms import AlgorithmSpec, ClientState, LocalTrace, _unit, gradient_eval_count, local_round
from .data import (
    LabeledDataset,
    Partition,
    QuadraticProblem,
    batch_stream,
    blob_centers,
    dirichlet_partition,
    iid_partition,
    make_blobs,
    make_quadratic_family,
    pathological_partition,
)
from .metrics import (
    RoundMetrics,
    estimation_error,
    global_sharpness,
    perturbation_drift,
    test_accuracy,
    virtual_global_model,
)
from .models import ContractError, GradientOracle, ModelSpec, forward_loss, gradient, init_params

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e12


@dataclass(frozen=True)
class DataConfig:
    kind: str = "blobs"  # "blobs" or "quadratic"
    # blobs
    n_classes: int = 10
    samples_per_class: int = 50
    test_per_class: int = 50
    in_dim: int = 2
    spread: float = 0.3
    partition: str = "dirichlet"  # "dirichlet", "pathological" or "iid"
    dirichlet_beta: float = 0.1
    pathological_alpha: int = 2
    # quadratic
    dim: int = 5
    heterogeneity: float = 1.0
    mu_min: float = 0.5
    l_max: float = 2.0
    seed: int | None = None  # defaults to the experiment seed

    def __post_init__(self):
        positive = ("n_classes", "samples_per_class", "test_per_class", "in_dim", "dim")
        for key in positive:
            if getattr(self, key) < 1:
                raise ContractError(f"data.{key}: must be >= 1")
        for key in ("spread", "dirichlet_beta", "mu_min"):
            if not getattr(self, key) > 0:
                raise ContractError(f"data.{key}: must be > 0")
        if self.heterogeneity < 0:
            raise ContractError("data.heterogeneity: must be >= 0")
        if self.l_max < self.mu_min:
            raise ContractError("data.l_max: must be >= data.mu_min")
        if not 1 <= self.pathological_alpha <= self.n_classes:
            raise ContractError("data.pathological_alpha: must lie in [1, n_classes]")


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: AlgorithmSpec
    model: ModelSpec
    data: DataConfig
    n_clients: int = 20
    active_ratio: float = 0.5
    rounds: int = 100
    local_epochs: int = 1
    local_steps: int | None = None
    batch_size: int | None = 16
    eta_l: float = 0.1
    eta_g: float = 1.0
    lr_decay: float = 0.998
    seed: int = 0
    metric_every: int = 1
    sharpness_rho: float = 0.05
    checkpoint_every: int = 0

    def __post_init__(self):
        if not 0 < self.active_ratio <= 1:
            raise ContractError("active_ratio must lie in (0, 1]")
        if self.rounds < 0:
            raise ContractError("rounds must be >= 0")
        if not (self.eta_l > 0 and self.eta_g > 0):
            raise ContractError("eta_l and eta_g must be > 0")
        if not 0 < self.lr_decay <= 1:
            raise ContractError("lr_decay must lie in (0, 1]")
        if self.n_clients < 1:
            raise ContractError("n_clients must be >= 1")
        if self.local_epochs < 1 or (self.local_steps is not None and self.local_steps < 1):
            raise ContractError("local_epochs/local_steps must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.metric_every < 1:
            raise ContractError("metric_every must be >= 1")
        if not self.sharpness_rho > 0:
            raise ContractError("sharpness_rho must be > 0")
        if (self.model.kind == "quadratic") != (self.data.kind == "quadratic"):
            raise ContractError("quadratic data requires the quadratic model and vice versa")


@dataclass
class ServerState:
    w: np.ndarray
    C: np.ndarray
    lam: np.ndarray
    clients: list[ClientState]
    round: int = 0

    @classmethod
    def initial(cls, w0: np.ndarray, n_clients: int) -> "ServerState":
        n = w0.shape[0]
        return cls(w0.copy(), np.zeros(n), np.zeros(n), [ClientState.zeros(n) for _ in range(n_clients)])


@dataclass
class ExperimentResult:
    metrics: list[RoundMetrics]
    state: ServerState
    grad_evals: int
    expected_grad_evals: int
    local_steps_total: int


class DivergenceError(RuntimeError):
    def __init__(self, round: int, metrics: list[RoundMetrics], state: ServerState):
        super().__init__(f"parameters diverged (non-finite or |w| > {DIVERGENCE_LIMIT:g}) in round {round}")
        self.round = round
        self.metrics = metrics
        self.state = state


@dataclass
class Federation:
    """Materialised data for one experiment."""

    model: ModelSpec
    n_clients: int
    full_data: object
    test_data: object | None
    dataset: LabeledDataset | None = None
    partition: Partition | None = None
    problem: QuadraticProblem | None = None

    def client_batches(self, cfg: ExperimentConfig, client: int, round: int) -> list:
        if self.problem is not None:
            return [self.problem.client_batch(client)] * (cfg.local_steps or cfg.local_epochs)
        size = len(self.partition.assignments[client])
        bs = cfg.batch_size or size
        out: list = []
        epoch = 0
        while True:
            for b in batch_stream(self.dataset, self.partition, client, bs, cfg.seed, round, epoch):
                out.append(b)
                if cfg.local_steps is not None and len(out) == cfg.local_steps:
                    return out
            epoch += 1
            if cfg.local_steps is None and epoch == cfg.local_epochs:
                return out


def build_federation(cfg: ExperimentConfig) -> Federation:
    d = cfg.data
    seed = cfg.seed if d.seed is None else d.seed
    if d.kind == "quadratic":
        prob = make_quadratic_family(cfg.n_clients, d.dim, d.heterogeneity, seed, d.mu_min, d.l_max)
        return Federation(cfg.model, cfg.n_clients, prob.full_batch(), None, problem=prob)
    if d.kind != "blobs":
        raise ContractError(f"unknown data kind {d.kind!r}")
    centers = blob_centers(d.n_classes, d.in_dim, d.spread, seed)
    train = make_blobs(d.n_classes, d.samples_per_class, d.in_dim, d.spread, seed, centers, stream=1)
    test = make_blobs(d.n_classes, d.test_per_class, d.in_dim, d.spread, seed, centers, stream=2)
    part = make_partition(d, train.labels, cfg.n_clients, seed)
    part.validate(len(train))
    return Federation(cfg.model, cfg.n_clients, train.batch(), test.batch(), dataset=train, partition=part)


def make_partition(d: DataConfig, labels, n_clients: int, seed: int) -> Partition:
    if d.partition == "dirichlet":
        return dirichlet_partition(labels, n_clients, d.dirichlet_beta, seed)
    if d.partition == "pathological":
        return pathological_partition(labels, n_clients, d.pathological_alpha, seed)
    if d.partition == "iid":
        return iid_partition(len(labels), n_clients, seed)
    raise ContractError(f"unknown partition {d.partition!r}")


def sample_active_clients(n_clients: int, active_ratio: float, round: int, seed: int) -> list[int]:
    k = max(1, int(np.floor(active_ratio * n_clients + 0.5)))
    k = min(k, n_clients)
    rng = np.random.default_rng([seed, round])
    return sorted(int(i) for i in rng.choice(n_clients, size=k, replace=False))


def aggregate(w_t: np.ndarray, locals_: Sequence[np.ndarray], eta_g: float) -> np.ndarray:
    """``w_t - eta_g * mean_i (w_t - w_i)``."""
    if len(locals_) == 0:
        raise ContractError("aggregation needs at least one local model")
    w_t = np.asarray(w_t, dtype=np.float64)
    drift = np.zeros_like(w_t)
    for w_i in locals_:
        if np.shape(w_i) != w_t.shape:
            raise ContractError("local model length mismatch")
        drift += w_t - w_i
    return w_t - eta_g * (drift / len(locals_))


def server_control_update(C: np.ndarray, delta_Cs: Sequence[np.ndarray], n_clients: int) -> np.ndarray:
    total = np.zeros_like(C)
    for d in delta_Cs:
        total += d
    return C + total / n_clients


def server_dual_update(lam: np.ndarray, w_t: np.ndarray, locals_: Sequence[np.ndarray], beta: float) -> np.ndarray:
    if not beta > 0:
        raise ContractError("beta must be > 0")
    total = np.zeros_like(lam)
    for w_i in locals_:
        total += w_i - w_t
    return lam - total / (beta * len(locals_))


def lr_schedule(eta_l_initial: float, decay: float, round: int) -> float:
    if not 0 < decay <= 1:
        raise ContractError("decay must lie in (0, 1]")
    return eta_l_initial * decay ** round


def _diverged(w: np.ndarray) -> bool:
    return not np.all(np.isfinite(w)) or float(np.max(np.abs(w))) > DIVERGENCE_LIMIT


def _drift_from_traces(fed: Federation, cfg: ExperimentConfig, w_t: np.ndarray,
                       traces: list[LocalTrace], finals: list[np.ndarray]) -> float:
    # clients that finished early hold their final model in the virtual average
    horizon = max(len(tr.iterates) for tr in traces)
    global_dirs = []
    for k in range(horizon):
        at_k = [tr.iterates[k] if k < len(tr.iterates) else fin for tr, fin in zip(traces, finals)]
        w_g = virtual_global_model(w_t, at_k, cfg.eta_g)
        global_dirs.append(_unit(gradient(fed.model, w_g, fed.full_data)))
    total, pairs = 0.0, 0
    for tr in traces:
        total += 2.0 * len(tr.directions) * perturbation_drift(global_dirs[: len(tr.directions)], [tr.directions])
        pairs += len(tr.directions)
    return total / (2.0 * pairs)


def evaluate(fed: Federation, cfg: ExperimentConfig, r: int, w: np.ndarray, w_prev: np.ndarray | None,
             pd: float | None) -> RoundMetrics:
    g = gradient(fed.model, w, fed.full_data)
    row = RoundMetrics(
        round=r,
        train_loss=forward_loss(fed.model, w, fed.full_data),
        grad_norm=float(np.linalg.norm(g)),
        sharpness=global_sharpness(fed.model, w, fed.full_data, cfg.sharpness_rho),
        pd=pd,
        eta_l=lr_schedule(cfg.eta_l, cfg.lr_decay, r),
    )
    if fed.test_data is not None:
        row.test_acc = test_accuracy(fed.model, w, fed.test_data)
    if w_prev is not None:
        row.est_error = estimation_error(w_prev, w, fed.model, fed.full_data)
    return row


def write_checkpoint(path, round: int, w: np.ndarray) -> None:
    Path(path).write_text(f"round={round}\n" + " ".join(f"{v:.17g}" for v in w) + "\n")


def read_checkpoint(path) -> tuple[int, np.ndarray]:
    head, body = Path(path).read_text().split("\n", 1)
    if not head.startswith("round="):
        raise ContractError(f"{path}: checkpoint must start with 'round=<t>'")
    return int(head[len("round="):]), np.array([float(v) for v in body.split()])


def run_experiment(cfg: ExperimentConfig, *, fed: Federation | None = None,
                   schedule: Callable[[int], Sequence[int]] | None = None,
                   before_round: Callable[[int, ServerState, list[int]], None] | None = None,
                   checkpoint_dir=None) -> ExperimentResult:
    """Run ``cfg.rounds`` federated rounds and return metric rows for ``w^0 .. w^T``.

    ``schedule`` overrides client sampling (round -> active ids); ``before_round``
    is called after sampling and before local training.
    """
    fed = fed or build_federation(cfg)
    spec = cfg.algorithm
    state = ServerState.initial(init_params(cfg.model, cfg.seed), cfg.n_clients)
    oracle = GradientOracle(cfg.model)
    per_step = gradient_eval_count(spec)
    steps_total = 0
    track_pd = spec.perturbation.kind != "none" and spec.perturbation.rho > 0

    rows = [evaluate(fed, cfg, 0, state.w, None, None)]
    w_prev = None
    for t in range(cfg.rounds):
        emit = (t + 1) % cfg.metric_every == 0 or t + 1 == cfg.rounds
        active = sorted(schedule(t)) if schedule else sample_active_clients(
            cfg.n_clients, cfg.active_ratio, t, cfg.seed)
        if before_round is not None:
            before_round(t, state, active)
        eta_l = lr_schedule(cfg.eta_l, cfg.lr_decay, t)
        finals, traces, delta_c = [], [], []
        for cid in active:
            batches = fed.client_batches(cfg, cid, t)
            trace = LocalTrace() if (track_pd and emit) else None
            w_i, new_state = local_round(spec, cfg.model, state.w, state.clients[cid], state.C,
                                         batches, eta_l, oracle=oracle, trace=trace)
            steps_total += len(batches)
            delta_c.append(new_state.c_i - state.clients[cid].c_i)
            state.clients[cid] = new_state
            finals.append(w_i)
            if trace is not None:
                traces.append(trace)

        w_new = aggregate(state.w, finals, cfg.eta_g)
        if spec.correction.kind == "scaffold":
            state.C = server_control_update(state.C, delta_c, cfg.n_clients)
        elif spec.correction.kind == "dyn":
            state.lam = server_dual_update(state.lam, state.w, finals, spec.correction.beta)
        pd = _drift_from_traces(fed, cfg, state.w, traces, finals) if traces else None
        w_prev, state.w = state.w, w_new
        state.round = t + 1

        if _diverged(state.w):
            log.warning("divergence at round %d", t + 1)
            raise DivergenceError(t + 1, rows, state)
        if emit:
            rows.append(evaluate(fed, cfg, t + 1, state.w, w_prev, pd))
        if checkpoint_dir is not None and cfg.checkpoint_every and (t + 1) % cfg.checkpoint_every == 0:
            write_checkpoint(Path(checkpoint_dir) / f"checkpoint_{t + 1:05d}.txt", t + 1, state.w)

    return ExperimentResult(rows, state, oracle.calls, per_step * steps_total, steps_total)

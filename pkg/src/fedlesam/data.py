"""Synthetic datasets and non-IID client partitions."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .models import Batch, ContractError, QuadBatch


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        if self.features.shape[0] != self.labels.shape[0]:
            raise ContractError("feature rows must equal label count")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ContractError("labels must lie in [0, n_classes)")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def batch(self, indices=None) -> Batch:
        if indices is None:
            return Batch(self.features, self.labels)
        return Batch(self.features[indices], self.labels[indices])


@dataclass
class Partition:
    assignments: list
    n_clients: int = field(init=False)

    def __post_init__(self):
        self.assignments = [np.asarray(a, dtype=np.int64) for a in self.assignments]
        self.n_clients = len(self.assignments)

    def sizes(self) -> list[int]:
        return [len(a) for a in self.assignments]

    def validate(self, n_samples: int) -> None:
        if any(len(a) == 0 for a in self.assignments):
            raise ContractError("partition has an empty client")
        allidx = np.concatenate(self.assignments)
        if allidx.shape[0] != n_samples or not np.array_equal(np.sort(allidx), np.arange(n_samples)):
            raise ContractError("partition is not an exact cover of the dataset indices")

    def write_csv(self, path) -> None:
        lines = ["client_id,sample_index"]
        for cid, idx in enumerate(self.assignments):
            lines.extend(f"{cid},{int(i)}" for i in idx)
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def read_csv(cls, path) -> "Partition":
        rows = Path(path).read_text().split("\n")[1:]
        pairs = [tuple(int(v) for v in r.split(",")) for r in rows if r]
        n = max(c for c, _ in pairs) + 1
        groups: list[list[int]] = [[] for _ in range(n)]
        for c, i in pairs:
            groups[c].append(i)
        return cls(groups)


def _repair_empty(groups: list[list[int]]) -> None:
    # move one sample from the currently largest client into each empty one
    for cid in range(len(groups)):
        if not groups[cid]:
            donor = max(range(len(groups)), key=lambda j: (len(groups[j]), -j))
            groups[cid].append(groups[donor].pop())


def dirichlet_partition(labels, n_clients: int, beta: float, seed: int) -> Partition:
    """Split each class across clients with proportions drawn from Dir(beta)."""
    labels = np.asarray(labels, dtype=np.int64)
    if not beta > 0:
        raise ContractError("dirichlet beta must be > 0")
    if n_clients < 1:
        raise ContractError("n_clients must be >= 1")
    if labels.shape[0] < n_clients:
        raise ContractError("need at least one sample per client")
    rng = np.random.default_rng(seed)
    groups: list[list[int]] = [[] for _ in range(n_clients)]
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        props = rng.dirichlet(np.full(n_clients, beta))
        cuts = np.floor(np.cumsum(props)[:-1] * idx.shape[0]).astype(np.int64)
        for cid, part in enumerate(np.split(idx, cuts)):
            groups[cid].extend(part.tolist())
    _repair_empty(groups)
    return Partition([sorted(g) for g in groups])


def pathological_partition(labels, n_clients: int, alpha: int, seed: int) -> Partition:
    """Give every client shards from exactly ``alpha`` distinct classes.

    The ``n_clients * alpha`` shards are spread as evenly as possible over the
    classes present, each class cut into equal contiguous shards. Shards are
    laid out class by class and dealt round-robin, so a client's shards are
    ``n_clients`` positions apart and therefore come from distinct classes.
    """
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    n_classes = classes.shape[0]
    if n_clients < 1:
        raise ContractError("n_clients must be >= 1")
    if not 1 <= alpha <= n_classes:
        raise ContractError(f"alpha={alpha} must lie in [1, {n_classes}] (classes present)")
    n_shards = n_clients * alpha
    if n_shards < n_classes:
        raise ContractError(
            f"n_clients*alpha={n_shards} shards cannot cover {n_classes} classes; "
            "every class needs at least one shard"
        )
    rng = np.random.default_rng(seed)
    order = classes[rng.permutation(n_classes)]
    per_class = np.full(n_classes, n_shards // n_classes)
    per_class[: n_shards % n_classes] += 1

    shards = []
    for cls, k in zip(order, per_class):
        idx = np.flatnonzero(labels == cls)
        if idx.shape[0] < k:
            raise ContractError(
                f"class {int(cls)} has {idx.shape[0]} samples but needs {int(k)} shards"
            )
        rng.shuffle(idx)
        shards.extend(np.array_split(idx, k))

    client_of_slot = rng.permutation(n_clients)
    groups: list[list[int]] = [[] for _ in range(n_clients)]
    for pos, shard in enumerate(shards):
        groups[client_of_slot[pos % n_clients]].extend(shard.tolist())
    return Partition([sorted(g) for g in groups])


def iid_partition(n_samples: int, n_clients: int, seed: int) -> Partition:
    if n_samples < n_clients:
        raise ContractError("need at least one sample per client")
    rng = np.random.default_rng(seed)
    return Partition([sorted(p.tolist()) for p in np.array_split(rng.permutation(n_samples), n_clients)])


def blob_centers(n_classes: int, in_dim: int, spread: float, seed: int, min_sep: float = 6.0) -> np.ndarray:
    """Random class centres at least ``min_sep * spread`` apart (rejection sampling)."""
    rng = np.random.default_rng(seed)
    radius = min_sep * spread * max(1.0, n_classes ** (1.0 / in_dim))
    centers: list[np.ndarray] = []
    attempts = 0
    while len(centers) < n_classes:
        cand = rng.uniform(-radius, radius, size=in_dim)
        if all(np.linalg.norm(cand - c) >= min_sep * spread for c in centers):
            centers.append(cand)
            attempts = 0
            continue
        attempts += 1
        if attempts > 200:
            radius *= 1.25
            attempts = 0
    return np.array(centers)


def make_blobs(n_classes: int, samples_per_class: int, in_dim: int, spread: float, seed: int,
               centers: np.ndarray | None = None, stream: int = 1) -> LabeledDataset:
    """Isotropic Gaussian clusters, one per class, sample-ordered by class.

    ``stream`` selects an independent sample stream for the same centres, so a
    test set can be drawn from the training distribution.
    """
    if min(n_classes, samples_per_class, in_dim) < 1 or not spread > 0:
        raise ContractError("counts must be >= 1 and spread > 0")
    if centers is None:
        centers = blob_centers(n_classes, in_dim, spread, seed)
    rng = np.random.default_rng([seed, stream])
    feats = np.concatenate(
        [c + spread * rng.standard_normal((samples_per_class, in_dim)) for c in centers]
    )
    labels = np.repeat(np.arange(n_classes), samples_per_class)
    return LabeledDataset(feats, labels, n_classes)


@dataclass(frozen=True)
class QuadraticProblem:
    """Per-client quadratics ``F_i(w) = 1/2 (w - c_i)^T A_i (w - c_i)``; ``F = mean_i F_i``."""

    A: np.ndarray
    c: np.ndarray

    @property
    def n_clients(self) -> int:
        return self.c.shape[0]

    @property
    def dim(self) -> int:
        return self.c.shape[1]

    def client_batch(self, i: int) -> QuadBatch:
        return QuadBatch(self.A[i], self.c[i])

    def full_batch(self) -> QuadBatch:
        return QuadBatch(self.A, self.c)

    def client_grads(self, w) -> np.ndarray:
        return np.einsum("nij,nj->ni", self.A, np.asarray(w)[None, :] - self.c)

    def global_grad(self, w) -> np.ndarray:
        return self.client_grads(w).mean(axis=0)

    def loss(self, w) -> float:
        diff = np.asarray(w)[None, :] - self.c
        return 0.5 * float(np.mean(np.einsum("ni,nij,nj->n", diff, self.A, diff)))

    def mean_hessian(self) -> np.ndarray:
        return self.A.mean(axis=0)

    def minimizer(self) -> np.ndarray:
        return np.linalg.solve(self.A.sum(axis=0), np.einsum("nij,nj->i", self.A, self.c))

    @property
    def L(self) -> float:
        """Common smoothness constant of the client losses."""
        return float(max(np.linalg.eigvalsh(a)[-1] for a in self.A))

    @property
    def L_g(self) -> float:
        """Smoothness constant of the global loss."""
        return float(np.linalg.eigvalsh(self.mean_hessian())[-1])

    @property
    def mu(self) -> float:
        return float(min(np.linalg.eigvalsh(a)[0] for a in self.A))

    def sigma_g(self, w) -> float:
        """Largest client/global gradient gap ``max_i ||grad F_i(w) - grad F(w)||`` at ``w``."""
        g = self.client_grads(w)
        return float(np.linalg.norm(g - g.mean(axis=0), axis=1).max())

    def sigma_g_unit_sq(self, w, eps: float = 1e-12) -> float:
        """Squared gap between the unit summed client gradient and the unit global gradient."""
        g = self.client_grads(w)
        s = g.sum(axis=0)
        full = self.global_grad(w)
        ns, nf = np.linalg.norm(s), np.linalg.norm(full)
        if ns < eps or nf < eps:
            return 0.0
        return float(np.sum((s / ns - full / nf) ** 2))


def _random_rotation(rng, dim: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def make_quadratic_family(n_clients: int, dim: int, heterogeneity: float, seed: int,
                          mu_min: float = 0.5, l_max: float = 2.0,
                          center_scale: float = 2.0) -> QuadraticProblem:
    """Random SPD quadratics with centres spread ``heterogeneity`` around a shared mean."""
    if heterogeneity < 0:
        raise ContractError("heterogeneity must be >= 0")
    if not 0 < mu_min <= l_max:
        raise ContractError("need 0 < mu_min <= l_max")
    rng = np.random.default_rng(seed)
    A = np.empty((n_clients, dim, dim))
    for i in range(n_clients):
        q = _random_rotation(rng, dim)
        eig = rng.uniform(mu_min, l_max, size=dim)
        a = (q * eig) @ q.T
        A[i] = 0.5 * (a + a.T)
    center = center_scale * rng.standard_normal(dim)
    u = rng.standard_normal((n_clients, dim))
    u -= u.mean(axis=0)
    norms = np.linalg.norm(u, axis=1)
    if norms.max() > 0:
        u /= norms.max()
    return QuadraticProblem(A, center[None, :] + heterogeneity * u)


def batch_stream(dataset: LabeledDataset, partition: Partition, client: int,
                 batch_size: int, seed: int, round: int, epoch: int = 0) -> Iterator[Batch]:
    """One shuffled pass over a client's samples, RNG keyed by (seed, round, client).

    Later local epochs of the same round append ``epoch`` to the key.
    """
    if batch_size < 1:
        raise ContractError("batch_size must be >= 1")
    if not 0 <= client < partition.n_clients:
        raise ContractError(f"unknown client {client}")
    key = [seed, round, client] if epoch == 0 else [seed, round, client, epoch]
    rng = np.random.default_rng(key)
    idx = partition.assignments[client][rng.permutation(len(partition.assignments[client]))]
    for start in range(0, idx.shape[0], batch_size):
        yield dataset.batch(idx[start:start + batch_size])

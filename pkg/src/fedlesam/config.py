"""TOML experiment configs: parsing, defaults, validation and hashing.

A config is a flat table of experiment keys plus optional ``[model]``,
``[data]`` and ``[output]`` tables::

    algorithm = "fedlesam"
    rounds = 100
    local_steps = 5

    [data]
    kind = "blobs"
    dirichlet_beta = 0.1

Every key must be known; anything else is rejected by name.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .algorithms import ALGORITHMS, AlgorithmSpec
from .models import ContractError, ModelSpec
from .server import DataConfig, ExperimentConfig

SEED_ENV = "FEDLESAM_SEED"

# rho for algorithms that perturb, when the config leaves it out
DEFAULT_RHO = {
    "fedsam": 0.01,
    "fedlesam": 0.01,
    "fedgamma": 0.1,
    "fedlesam-s": 0.1,
    "fedlesam-d": 0.1,
}
DEFAULT_BETA = 100.0
DEFAULT_HIDDEN = 8

UNSUPPORTED = {
    "fedsmoo": "its dual/perturbation-correction update rules are not specified; see README 'Scope'",
    "mofedsam": "momentum variant is out of scope; see README 'Scope'",
    "fedcm": "out of scope; see README 'Scope'",
    "fedadam": "server-adaptive optimisers are out of scope; see README 'Scope'",
}

_TOP_TYPES = {
    "algorithm": str,
    "rho": float,
    "beta": float,
    "n_clients": int,
    "active_ratio": float,
    "rounds": int,
    "local_epochs": int,
    "local_steps": int,
    "batch_size": int,
    "eta_l": float,
    "eta_g": float,
    "lr_decay": float,
    "seed": int,
    "metric_every": int,
    "sharpness_rho": float,
    "checkpoint_every": int,
}
_MODEL_TYPES = {"kind": str, "hidden_dim": int}
_DATA_TYPES = {f.name: (int if f.name == "seed" else type(f.default)) for f in fields(DataConfig)}
_OUTPUT_TYPES = {
    "surface": bool,
    "surface_resolution": int,
    "surface_extent": float,
    "surface_seed": int,
    "partition": bool,
}
_TABLES = {"model": _MODEL_TYPES, "data": _DATA_TYPES, "output": _OUTPUT_TYPES}


@dataclass(frozen=True)
class OutputConfig:
    surface: bool = False
    surface_resolution: int = 21
    surface_extent: float = 1.0
    surface_seed: int = 0
    partition: bool = False

    def __post_init__(self):
        if self.surface_resolution < 1 or self.surface_resolution % 2 == 0:
            raise ContractError("output.surface_resolution: must be a positive odd integer")
        if not self.surface_extent > 0:
            raise ContractError("output.surface_extent: must be > 0")


@dataclass(frozen=True)
class RunConfig:
    experiment: ExperimentConfig
    output: OutputConfig
    canonical: str
    hash: str


def _typed(key: str, value, want: type):
    if want is bool:
        ok = isinstance(value, bool)
    elif want is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif want is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if ok:
            value = float(value)
    else:
        ok = isinstance(value, want)
    if not ok:
        raise ContractError(f"{key}: expected {want.__name__}, got {type(value).__name__} {value!r}")
    return value


def _check_table(prefix: str, table, types: dict) -> dict:
    if not isinstance(table, dict):
        raise ContractError(f"{prefix}: expected a table")
    out = {}
    for key, value in table.items():
        name = f"{prefix}.{key}" if prefix else key
        if key not in types:
            raise ContractError(f"{name}: unknown key")
        out[key] = _typed(name, value, types[key])
    return out


def canonical_form(doc: dict) -> str:
    """Sorted-key, whitespace-free JSON rendering of a parsed document."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def config_hash(doc: dict) -> str:
    return hashlib.sha256(canonical_form(doc).encode()).hexdigest()


def _load(text: str) -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ContractError(f"config is not valid TOML: {exc}") from None


def _validated(raw: dict) -> dict:
    doc = {}
    top = {k: v for k, v in raw.items() if k not in _TABLES}
    doc.update(_check_table("", top, _TOP_TYPES))
    for name, types in _TABLES.items():
        if name in raw:
            doc[name] = _check_table(name, raw[name], types)
    return doc


def _build(doc: dict) -> RunConfig:
    if "algorithm" not in doc:
        raise ContractError("algorithm: required key missing")
    name = doc["algorithm"].lower()
    if name in UNSUPPORTED:
        raise ContractError(f"algorithm: {name!r} is unsupported ({UNSUPPORTED[name]})")
    if name not in ALGORITHMS:
        raise ContractError(f"algorithm: unknown {doc['algorithm']!r}; choose from {sorted(ALGORITHMS)}")
    pert, corr = ALGORITHMS[name]
    if "rho" in doc and pert == "none":
        raise ContractError(f"rho: {name} has no perturbation, so rho would be ignored")
    if "beta" in doc and corr != "dyn":
        raise ContractError(f"beta: {name} has no dynamic regulariser, so beta would be ignored")
    rho = doc.get("rho", DEFAULT_RHO.get(name, 0.0))
    beta = doc.get("beta", DEFAULT_BETA)
    try:
        algo = AlgorithmSpec.from_name(name, rho=rho, beta=beta)
    except ContractError as exc:
        key = "rho" if "rho" in str(exc) else "beta"
        raise ContractError(f"{key}: {exc}") from None

    data_doc = dict(doc.get("data", {}))
    try:
        data = DataConfig(**data_doc)
    except TypeError as exc:
        raise ContractError(f"data: {exc}") from None
    if data.kind not in ("blobs", "quadratic"):
        raise ContractError(f"data.kind: unknown {data.kind!r}; choose 'blobs' or 'quadratic'")
    if data.partition not in ("dirichlet", "pathological", "iid"):
        raise ContractError(f"data.partition: unknown {data.partition!r}")

    if data.kind == "quadratic" and "batch_size" in doc:
        raise ContractError("batch_size: quadratic clients always use their full objective")

    model_doc = doc.get("model", {})
    kind = model_doc.get("kind", "quadratic" if data.kind == "quadratic" else "mlp")
    if "hidden_dim" in model_doc and kind != "mlp":
        raise ContractError("model.hidden_dim: only the mlp model has a hidden layer")
    if (kind == "quadratic") != (data.kind == "quadratic"):
        raise ContractError(f"model.kind: {kind!r} cannot train on {data.kind!r} data")
    try:
        if kind == "quadratic":
            model = ModelSpec.quadratic(data.dim)
        elif kind == "linear":
            model = ModelSpec.linear(data.in_dim, data.n_classes)
        elif kind == "mlp":
            model = ModelSpec.mlp(data.in_dim, model_doc.get("hidden_dim", DEFAULT_HIDDEN), data.n_classes)
        else:
            raise ContractError(f"unknown kind {kind!r}; choose quadratic, linear or mlp")
    except ContractError as exc:
        raise ContractError(f"model.kind: {exc}") from None

    exp_keys = {k: v for k, v in doc.items() if k not in ("algorithm", "rho", "beta") and k not in _TABLES}
    try:
        exp = ExperimentConfig(algorithm=algo, model=model, data=data, **exp_keys)
    except ContractError as exc:
        raise ContractError(_name_key(str(exc), exp_keys)) from None
    try:
        out = OutputConfig(**doc.get("output", {}))
    except ContractError as exc:
        raise ContractError(str(exc)) from None
    return RunConfig(exp, out, canonical_form(doc), config_hash(doc))


def _name_key(message: str, keys: dict) -> str:
    # prefix invariant failures with the config key they concern
    for key in sorted(_TOP_TYPES, key=len, reverse=True):
        if message.startswith(key) or f" {key} " in f" {message} ":
            return f"{key}: {message}"
    return message


def parse_config(text: str, seed_override: int | None = None) -> RunConfig:
    """Parse and validate a TOML config; ``seed_override`` replaces the top-level seed."""
    doc = _validated(_load(text))
    if seed_override is not None:
        doc["seed"] = int(seed_override)
    return _build(doc)


def env_seed() -> int | None:
    raw = os.environ.get(SEED_ENV, "").strip()
    if not raw:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ContractError(f"{SEED_ENV}: expected an integer, got {raw!r}") from None


def load_config(path) -> RunConfig:
    """Read a config file, applying the global seed override from the environment."""
    return parse_config(Path(path).read_text(), seed_override=env_seed())

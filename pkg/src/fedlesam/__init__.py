"""Deterministic federated-learning simulator for FedAvg, FedSAM, FedLESAM and their
Scaffold / FedDyn variants, with sharpness and perturbation-drift diagnostics."""

from .algorithms import ALGORITHMS, AlgorithmSpec, ClientState, CorrectionRule, PerturbationRule, local_round
from .config import parse_config
from .kernels import BACKEND
from .models import ContractError, ModelSpec
from .server import ExperimentConfig, run_experiment

__all__ = [
    "ALGORITHMS",
    "AlgorithmSpec",
    "BACKEND",
    "ClientState",
    "ContractError",
    "CorrectionRule",
    "ExperimentConfig",
    "ModelSpec",
    "PerturbationRule",
    "local_round",
    "parse_config",
    "run_experiment",
]
__version__ = "0.1.0"

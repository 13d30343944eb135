"""Blind asynchronous over-the-air aggregation for federated edge learning."""

__version__ = "0.1.0"

from .denoise import (
    DenoiseProblem,
    DenoiseSolution,
    RecoveryResult,
    SolverConfig,
    atomic_denoise,
    atomic_denoise_batch,
    recover_mean,
    select_lambda,
)
from .estimator import AtomicNormDenoiser
from .gridsearch import grid_oracle
from .spectral import SampleGrid, dirichlet_atom, vandermonde_decompose

__all__ = [
    "AtomicNormDenoiser",
    "DenoiseProblem",
    "DenoiseSolution",
    "RecoveryResult",
    "SampleGrid",
    "SolverConfig",
    "atomic_denoise",
    "atomic_denoise_batch",
    "dirichlet_atom",
    "grid_oracle",
    "recover_mean",
    "select_lambda",
    "vandermonde_decompose",
]

"""Density quantum neural networks: simulation, gradients and experiments.

Modules
-------
statevec     dense statevector / density-matrix simulation (big-endian qubits)
gates        gate matrices, RBS and FBS
ansatz       circuit families and data loaders
observables  gradient observables, commuting groups, diagonalizers
density      the density model, its three evaluation modes and the mixing bound
grad         parameter-shift, commuting-block and adjoint gradients, circuit accounting
subspace     unary-subspace simulation of Hamming-weight preserving circuits
moe          gating networks for data-dependent coefficients
data         bars and dots, Chebyshev targets, MNIST IDX + PCA
train        optimizers, pipelines, experiment templates, metrics ledger
cli          ``dqnn`` command line
"""
from importlib.metadata import PackageNotFoundError, version

from .ansatz import Circuit, Loader
from .density import (DensityModel, coefficients, expectation_exact, expectation_sampled,
                      lcu_expectation, prepare_deterministic)
from .grad import density_gradient, finite_difference
from .pauli import Observable, pauli, z_sum
from .statevec import DensityMatrix, State

try:
    __version__ = version("artifact")
except PackageNotFoundError:
    __version__ = "0.0.0"

__all__ = ["Circuit", "Loader", "DensityModel", "coefficients", "expectation_exact",
           "expectation_sampled", "lcu_expectation", "prepare_deterministic", "density_gradient",
           "finite_difference", "Observable", "pauli", "z_sum", "DensityMatrix", "State"]

"""Shared oracles for the test suite."""
import numpy as np
from scipy.stats import unitary_group

from motte.backend import CircuitLedger, StateVector, reduced_density_matrix
from motte.graph import CouplingGraph
from motte.spectral import SpectralRdm
from motte.tomography import estimate_report


def random_state(rng, n):
    v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return StateVector(v / np.linalg.norm(v), n)


def exact_report(state, g=None, k=2):
    g = g if g is not None else CouplingGraph.path(state.n_qubits)
    return estimate_report(CircuitLedger(state.n_qubits, g), g, k, 0.0, 0, oracle_state=state)


def generic_rdm(rng, m, extra=None):
    """Full-rank RDM on m qubits: partial trace of a Haar state on m + extra qubits (extra >= m)."""
    extra = m if extra is None else extra
    return reduced_density_matrix(random_state(rng, m + extra), tuple(range(m)))


def conjugate(rho, u, n_gate):
    """(I (x) u) rho (I (x) u)^dagger with u on the low ``n_gate`` bits."""
    full = np.kron(np.eye(rho.shape[0] // u.shape[0]), u)
    return full @ rho @ full.conj().T


def dm_pair(rng, m):
    """(init, target, true U) for density-matrix deduction on m gate qubits plus one probe."""
    rho = generic_rdm(rng, m + 1)
    u = unitary_group.rvs(2**m, random_state=rng)
    qubits = tuple(range(m + 1))
    init = SpectralRdm.from_matrix(rho, qubits, n_gate=m)
    target = SpectralRdm.from_matrix(conjugate(rho, u, m), qubits, n_gate=m)
    return init, target, u


def fidelity_deviation(u, v):
    return 1 - abs(np.trace(u.conj().T @ v)) / u.shape[0]

"""Gate deduction from local Pauli tomography: a statevector emulation of the Motte interface."""
from .backend import CircuitLedger, GateRecord, StateVector
from .deduction import DeducedGate, DeductionFailed, GateRequest, RetryTomography
from .graph import CouplingGraph
from .paulis import PauliString
from .qite import HamiltonianTerm, QiteRequest, parse_hamiltonian
from .session import LocalityError, MotteSession, ProtocolError, SessionConfig, StaleReport
from .tomography import TomographyReport, estimate_report, schedule_settings

__all__ = [
    "CircuitLedger", "CouplingGraph", "DeducedGate", "DeductionFailed", "GateRecord", "GateRequest",
    "HamiltonianTerm", "LocalityError", "MotteSession", "PauliString", "ProtocolError", "QiteRequest",
    "RetryTomography", "SessionConfig", "StaleReport", "StateVector", "TomographyReport",
    "estimate_report", "parse_hamiltonian", "schedule_settings",
]
__version__ = "0.1.0"

"""Dense statevector simulation: the QPU underneath the interface, and the test oracle."""
from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .graph import CouplingGraph
from .paulis import PauliString, label_masks

STATE_CAP = 16
UNITARY_TOL = 1e-10
PROVENANCES = ("eigenstate", "density-matrix", "qite", "emulation-driver")

_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_SDG = np.diag([1, -1j]).astype(complex)
_BASIS_ROTATION = {"X": _H, "Y": _H @ _SDG, "Z": None}


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Generator keyed by ``(seed, *keys)``; distinct keys give independent streams."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *(int(k) for k in keys)]))


@dataclass(frozen=True, eq=False)
class StateVector:
    amplitudes: np.ndarray
    n_qubits: int

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size != 2**self.n_qubits:
            raise ValueError(f"{amps.size} amplitudes do not describe {self.n_qubits} qubits")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > 1e-12:
            # drift from long gate sequences is renormalized; anything larger is a bug
            if abs(norm - 1.0) > 1e-8:
                raise ValueError(f"state norm {norm} is not 1")
            amps = amps / norm
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def zero(cls, n_qubits: int) -> "StateVector":
        amps = np.zeros(2**n_qubits, dtype=complex)
        amps[0] = 1.0
        return cls(amps, n_qubits)

    def probabilities(self) -> np.ndarray:
        p = np.abs(self.amplitudes) ** 2
        return p / p.sum()

    def fidelity(self, other: "StateVector | np.ndarray") -> float:
        v = other.amplitudes if isinstance(other, StateVector) else np.asarray(other, dtype=complex)
        return float(abs(np.vdot(v, self.amplitudes)) ** 2)


@dataclass(eq=False)
class GateRecord:
    """A unitary placed on ``qubits``; ``qubits[0]`` is the least-significant local bit."""

    qubits: tuple[int, ...]
    unitary: np.ndarray
    provenance: str = "emulation-driver"
    request_id: str | None = None
    report_id: int | None = None

    def __post_init__(self):
        self.qubits = tuple(int(q) for q in self.qubits)
        self.unitary = np.asarray(self.unitary, dtype=complex)
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        dim = 2 ** len(self.qubits)
        if self.unitary.shape != (dim, dim):
            raise ValueError(f"unitary of shape {self.unitary.shape} does not fit {len(self.qubits)} qubits")
        if len(set(self.qubits)) != len(self.qubits):
            raise ValueError(f"repeated qubit in {self.qubits}")

    def unitarity_error(self) -> float:
        u = self.unitary
        return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))

    def to_json(self) -> dict:
        return {
            "qubits": list(self.qubits),
            "unitary": [[[float(z.real), float(z.imag)] for z in row] for row in self.unitary],
            "provenance": self.provenance,
            "request_id": self.request_id,
            "report_id": self.report_id,
        }

    @classmethod
    def from_json(cls, data: dict) -> "GateRecord":
        u = np.array([[complex(re, im) for re, im in row] for row in data["unitary"]])
        return cls(tuple(data["qubits"]), u, data.get("provenance", "emulation-driver"),
                   data.get("request_id"), data.get("report_id"))


@dataclass(eq=False)
class CircuitLedger:
    """Ordered gate list with greedy (as-soon-as-possible) layering.

    When ``graph`` is set, two-qubit gates must sit on its edges; in ``strict``
    mode gates wider than two qubits are refused.
    """

    n_qubits: int
    graph: CouplingGraph | None = None
    strict: bool = True
    gates: list[GateRecord] = field(default_factory=list)

    def __post_init__(self):
        gates, self.gates = list(self.gates), []
        for g in gates:
            self.append(g)

    def check(self, record: GateRecord) -> None:
        for q in record.qubits:
            if not 0 <= q < self.n_qubits:
                raise ValueError(f"gate on qubit {q} outside 0..{self.n_qubits - 1}")
        if record.unitarity_error() > UNITARY_TOL:
            raise ValueError(f"gate on {record.qubits} is not unitary (error {record.unitarity_error():.2e})")
        if len(record.qubits) > 2 and self.strict:
            raise ValueError(f"{len(record.qubits)}-qubit gate refused by a strict ledger")
        if self.graph is not None:
            if len(record.qubits) == 2 and not self.graph.has_edge(*record.qubits):
                raise ValueError(f"qubits {record.qubits} are not adjacent")
            if len(record.qubits) > 2 and not self.graph.is_connected(record.qubits):
                raise ValueError(f"qubits {record.qubits} are not a connected set")

    def append(self, record: GateRecord) -> None:
        self.check(record)
        self.gates.append(record)

    def __len__(self) -> int:
        return len(self.gates)

    def __iter__(self):
        return iter(self.gates)

    def layers(self) -> list[int]:
        """Layer index (from 1) of every gate."""
        last = [0] * self.n_qubits
        out = []
        for g in self.gates:
            layer = 1 + max(last[q] for q in g.qubits)
            for q in g.qubits:
                last[q] = layer
            out.append(layer)
        return out

    @property
    def depth(self) -> int:
        return max(self.layers(), default=0)

    def digest(self) -> str:
        h = hashlib.sha256()
        for g in self.gates:
            h.update(repr(g.qubits).encode())
            h.update(np.ascontiguousarray(g.unitary).tobytes())
        return h.hexdigest()

    def to_json(self) -> dict:
        return {
            "schema": "motte.ledger.v1",
            "n_qubits": self.n_qubits,
            "graph": self.graph.to_json() if self.graph is not None else None,
            "strict": self.strict,
            "depth": self.depth,
            "gates": [g.to_json() for g in self.gates],
        }

    @classmethod
    def from_json(cls, data: dict) -> "CircuitLedger":
        graph = CouplingGraph.from_json(data["graph"]) if data.get("graph") else None
        return cls(int(data["n_qubits"]), graph, bool(data.get("strict", True)),
                   [GateRecord.from_json(g) for g in data["gates"]])


def apply_matrix(amps: np.ndarray, n_qubits: int, matrix: np.ndarray, qubits: Sequence[int]) -> np.ndarray:
    """Apply a (not necessarily unitary) local matrix to a flat amplitude vector."""
    m = len(qubits)
    psi = np.asarray(amps, dtype=complex).reshape([2] * n_qubits)
    op = np.asarray(matrix, dtype=complex).reshape([2] * (2 * m))
    # operator axis j <-> local bit m-1-j; state axis a <-> qubit n-1-a
    axes = [n_qubits - 1 - qubits[m - 1 - j] for j in range(m)]
    out = np.tensordot(op, psi, axes=(list(range(m, 2 * m)), axes))
    out = np.moveaxis(out, list(range(m)), axes)
    return out.reshape(-1)


def run_circuit(ledger: CircuitLedger | Iterable[GateRecord], n_qubits: int) -> StateVector:
    if n_qubits > STATE_CAP:
        raise ValueError(f"{n_qubits} qubits exceeds the statevector cap of {STATE_CAP}")
    amps = StateVector.zero(n_qubits).amplitudes.copy()
    for g in ledger:
        if any(not 0 <= q < n_qubits for q in g.qubits):
            raise ValueError(f"gate on {g.qubits} outside 0..{n_qubits - 1}")
        if g.unitarity_error() > UNITARY_TOL:
            raise ValueError(f"gate on {g.qubits} is not unitary")
        amps = apply_matrix(amps, n_qubits, g.unitary, g.qubits)
    return StateVector(amps, n_qubits)


def apply_pauli(amps: np.ndarray, p: PauliString) -> np.ndarray:
    n = p.n_qubits
    x, z = label_masks(p.label)
    idx = np.arange(2**n)
    signs = 1 - 2 * (np.bitwise_count(idx & z).astype(np.int64) & 1)
    n_y = p.label.count("Y")
    coeff = p.phase.value_complex * (1j**n_y)
    out = np.empty_like(amps)
    out[idx ^ x] = coeff * signs * amps
    return out


def exact_expectation(state: StateVector, p: PauliString) -> float | complex:
    if p.n_qubits != state.n_qubits:
        raise ValueError(f"Pauli on {p.n_qubits} qubits vs state on {state.n_qubits}")
    val = np.vdot(state.amplitudes, apply_pauli(state.amplitudes, p))
    return float(val.real) if p.is_hermitian else complex(val)


def reduced_density_matrix(state: StateVector, qubits: Sequence[int]) -> np.ndarray:
    """Partial trace onto ``qubits`` (``qubits[0]`` least significant)."""
    n = state.n_qubits
    m = len(qubits)
    psi = state.amplitudes.reshape([2] * n)
    keep = [n - 1 - qubits[m - 1 - j] for j in range(m)]
    rest = [a for a in range(n) if a not in keep]
    mat = np.transpose(psi, keep + rest).reshape(2**m, -1)
    return mat @ mat.conj().T


def _sample_outcomes(probs: np.ndarray, shots: int, rng: np.random.Generator,
                     n_qubits: int, readout_flip: float) -> np.ndarray:
    counts = rng.multinomial(shots, probs)
    outcomes = np.repeat(np.arange(probs.size), counts)
    if readout_flip > 0:
        flips = rng.random((shots, n_qubits)) < readout_flip
        masks = flips @ (1 << np.arange(n_qubits))
        outcomes = outcomes ^ masks
    return outcomes


def _histogram(outcomes: np.ndarray, n_qubits: int) -> Counter:
    vals, counts = np.unique(outcomes, return_counts=True)
    return Counter({format(int(v), f"0{n_qubits}b"): int(c) for v, c in zip(vals, counts)})


def _check_sampling(shots: int, readout_flip: float) -> None:
    if shots < 1:
        raise ValueError("shots must be at least 1")
    if not 0 <= readout_flip <= 0.5:
        raise ValueError("readout_flip must lie in [0, 0.5]")


def sample_z_basis(state: StateVector, shots: int, seed: int | np.random.Generator,
                   readout_flip: float = 0.0) -> Counter:
    """Histogram of bitstrings (qubit ``n-1`` leftmost) from Z-basis shots."""
    _check_sampling(shots, readout_flip)
    rng = seed if isinstance(seed, np.random.Generator) else derive_rng(seed)
    return _histogram(_sample_outcomes(state.probabilities(), shots, rng, state.n_qubits, readout_flip),
                      state.n_qubits)


def rotate_to_basis(state: StateVector, basis: str) -> StateVector:
    """Rotate each qubit so that a Z measurement reads the requested X/Y/Z letter."""
    n = state.n_qubits
    if len(basis) != n or any(c not in "XYZ" for c in basis):
        raise ValueError(f"basis {basis!r} must give one of X/Y/Z for each of {n} qubits")
    amps = state.amplitudes
    for i, c in enumerate(basis):
        rot = _BASIS_ROTATION[c]
        if rot is not None:
            amps = apply_matrix(amps, n, rot, (n - 1 - i,))
    return StateVector(amps, n)


def sample_setting_counts(state: StateVector, basis: str, shots: int, rng: np.random.Generator,
                          readout_flip: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Distinct outcomes (as integers) and their counts for one measurement setting."""
    _check_sampling(shots, readout_flip)
    rotated = rotate_to_basis(state, basis)
    outcomes = _sample_outcomes(rotated.probabilities(), shots, rng, state.n_qubits, readout_flip)
    return np.unique(outcomes, return_counts=True)


def sample_pauli_setting(state: StateVector, basis: str, shots: int, seed: int | np.random.Generator,
                         readout_flip: float = 0.0) -> Counter:
    rng = seed if isinstance(seed, np.random.Generator) else derive_rng(seed)
    vals, counts = sample_setting_counts(state, basis, shots, rng, readout_flip)
    return Counter({format(int(v), f"0{state.n_qubits}b"): int(c) for v, c in zip(vals, counts)})


def parity_estimate(histogram: Counter | dict, label: str) -> float:
    """Mean eigenvalue of the Pauli ``label`` from a histogram taken in a compatible setting."""
    support = int("".join("0" if c == "I" else "1" for c in label), 2)
    total = 0
    acc = 0
    for bits, c in histogram.items():
        parity = bin(int(bits, 2) & support).count("1") & 1
        acc += c * (1 - 2 * parity)
        total += c
    return acc / total

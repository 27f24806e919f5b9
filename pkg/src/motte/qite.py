"""Gates from imaginary-time steps: least-squares generators built from local expectations."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .backend import StateVector, apply_matrix, apply_pauli, exact_expectation, reduced_density_matrix
from .graph import CouplingGraph
from .paulis import PauliString, label_index, local_basis, local_basis_matrices, local_product_table
from .spectral import rdm_expectations

DEFAULT_LAMBDA = 1e-8
STALL_TOL = 1e-10


@dataclass(frozen=True)
class HamiltonianTerm:
    coeff: float
    pauli: PauliString

    @property
    def support(self) -> tuple[int, ...]:
        return self.pauli.support

    def local_label(self, domain: Sequence[int]) -> str:
        return self.pauli.restrict(domain).label

    def __str__(self) -> str:
        sup = self.support
        letters = "".join(self.pauli.letter(q) for q in sup)
        sign = -1.0 if self.pauli.phase == 2 else 1.0
        return f"{sign * self.coeff:+.12g} {letters}@{','.join(map(str, sup))}"


_LINE = re.compile(r"^\s*([-+0-9.eE]+)\s+([IXYZ]+)@([0-9,\s]+)\s*$")


def parse_hamiltonian(text: str, n_qubits: int | None = None) -> list[HamiltonianTerm]:
    """Parse ``coeff LETTERS@q1,q2`` lines (letter i acts on the i-th listed qubit)."""
    raw = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        m = _LINE.match(body)
        if not m:
            raise ValueError(f"line {lineno}: cannot parse Hamiltonian term {line.strip()!r}")
        try:
            coeff = float(m.group(1))
            qubits = [int(q) for q in m.group(3).split(",")]
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
        letters = m.group(2)
        if len(letters) != len(qubits):
            raise ValueError(f"line {lineno}: {len(letters)} letters for {len(qubits)} qubits")
        if len(set(qubits)) != len(qubits):
            raise ValueError(f"line {lineno}: repeated qubit")
        raw.append((lineno, coeff, letters, qubits))
    if not raw:
        raise ValueError("Hamiltonian has no terms")
    n = n_qubits if n_qubits is not None else 1 + max(max(q) for _, _, _, q in raw)
    terms = []
    for lineno, coeff, letters, qubits in raw:
        if max(qubits) >= n:
            raise ValueError(f"line {lineno}: qubit {max(qubits)} outside 0..{n - 1}")
        terms.append(HamiltonianTerm(coeff, PauliString.from_sparse(dict(zip(qubits, letters)), n)))
    return terms


def format_hamiltonian(terms: Sequence[HamiltonianTerm]) -> str:
    return "\n".join(str(t) for t in terms) + "\n"


def validate_terms(terms: Sequence[HamiltonianTerm], g: CouplingGraph, ell: int | None = None) -> None:
    for t in terms:
        sup = t.support
        if not sup:
            continue
        if ell is not None and len(sup) > ell:
            raise ValueError(f"term {t} exceeds locality {ell}")
        if not g.is_connected(sup):
            raise ValueError(f"term {t} is not supported on a connected set")


def hamiltonian_matrix(terms: Sequence[HamiltonianTerm], n_qubits: int) -> np.ndarray:
    dim = 2**n_qubits
    h = np.zeros((dim, dim), dtype=complex)
    eye = np.eye(dim, dtype=complex)
    for t in terms:
        full = PauliString(t.pauli.label)
        sign = -1.0 if t.pauli.phase == 2 else 1.0
        cols = np.stack([apply_pauli(eye[:, c], full) for c in range(dim)], axis=1)
        h += sign * t.coeff * cols
    return h


def energy(state: StateVector, terms: Sequence[HamiltonianTerm]) -> float:
    return float(sum(t.coeff * exact_expectation(state, t.pauli) for t in terms))


@dataclass
class QiteRequest:
    terms: list[HamiltonianTerm]
    domain: tuple[int, ...]
    dtau: float
    n_steps: int = 1
    basis_k: int | None = None
    mean_field: bool = False
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        self.domain = tuple(int(q) for q in self.domain)
        if self.dtau <= 0:
            raise ValueError("dtau must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")
        for t in self.terms:
            if not set(t.support) <= set(self.domain):
                raise ValueError(f"term {t} is not inside the domain {self.domain}")

    @property
    def beta(self) -> float:
        return self.dtau * self.n_steps

    def to_json(self) -> dict:
        return {"terms": [str(t) for t in self.terms], "domain": list(self.domain), "dtau": self.dtau,
                "n_steps": self.n_steps, "basis_k": self.basis_k, "mean_field": self.mean_field,
                "lambda": self.lam}

    @classmethod
    def from_json(cls, data: Mapping, n_qubits: int) -> "QiteRequest":
        allowed = {"terms", "domain", "dtau", "n_steps", "basis_k", "mean_field", "lambda"}
        extra = set(data) - allowed
        if extra:
            raise ValueError(f"unknown qite keys {sorted(extra)}")
        terms = parse_hamiltonian("\n".join(data["terms"]), n_qubits)
        return cls(terms, tuple(data["domain"]), float(data["dtau"]), int(data.get("n_steps", 1)),
                   data.get("basis_k"), bool(data.get("mean_field", False)),
                   float(data.get("lambda", DEFAULT_LAMBDA)))


@dataclass
class QiteSolution:
    domain: tuple[int, ...]
    labels: list[str]
    coefficients: np.ndarray
    generator: np.ndarray
    residual: float
    lam: float
    variance: float = 0.0
    filled: list[str] = field(default_factory=list)

    def step_unitary(self, dtau: float) -> np.ndarray:
        vals, vecs = np.linalg.eigh(self.generator)
        return (vecs * np.exp(-1j * dtau * vals)) @ vecs.conj().T

    def coefficient(self, label: str) -> float:
        return float(self.coefficients[self.labels.index(label)]) if label in self.labels else 0.0


def basis_labels(m: int, basis_k: int | None = None) -> list[str]:
    """Non-identity local labels on ``m`` qubits with weight at most ``basis_k``."""
    out = []
    for lbl in local_basis(m)[1:]:
        if basis_k is None or sum(c != "I" for c in lbl) <= basis_k:
            out.append(lbl)
    return out


def expectation_vector(expectations: Mapping[str, float], m: int, *, mean_field: bool = False
                       ) -> tuple[np.ndarray, list[str]]:
    """Dense vector over ``local_basis(m)``; missing entries optionally factorized over qubits."""
    labels = local_basis(m)
    ev = np.empty(len(labels))
    filled = []
    for i, lbl in enumerate(labels):
        if i == 0:
            ev[i] = 1.0
        elif lbl in expectations:
            ev[i] = expectations[lbl]
        elif mean_field:
            val = 1.0
            for pos, c in enumerate(lbl):
                if c != "I":
                    single = "I" * pos + c + "I" * (m - 1 - pos)
                    if single not in expectations:
                        raise KeyError(f"missing single-qubit expectation {single}")
                    val *= expectations[single]
            ev[i] = val
            filled.append(lbl)
        else:
            raise KeyError(f"missing expectation for {lbl}; enlarge k or enable mean-field filling")
    return ev, filled


def _h_vector(local_terms: Sequence[tuple[float, str]], m: int) -> np.ndarray:
    hv = np.zeros(4**m)
    for c, lbl in local_terms:
        hv[label_index(lbl)] += c
    return hv


def qite_system(ev: np.ndarray, hv: np.ndarray, m: int, basis_idx: np.ndarray):
    """Gram matrix S, right-hand side b, <h> and <h^2> from an expectation vector.

    Minimizing ``||(h - <h>)|psi> - i A |psi>||^2`` over ``A = sum a_I sigma_I``
    gives ``S a = b`` with ``S_IJ = Re<sigma_I sigma_J>`` and
    ``b_I = Im<sigma_I h>``.
    """
    index, power = local_product_table(m)
    phase = (1j) ** power
    prod = phase * ev[index]  # <sigma_a sigma_b>
    s = prod[np.ix_(basis_idx, basis_idx)].real
    s = 0.5 * (s + s.T)
    hnz = np.nonzero(hv)[0]
    # <sigma_I h> = sum_t c_t <sigma_I sigma_t>
    b = (prod[np.ix_(basis_idx, hnz)] @ hv[hnz]).imag
    e_h = float(hv @ ev)
    e_h2 = float((hv[hnz] @ prod[np.ix_(hnz, hnz)] @ hv[hnz]).real)
    return s, b, e_h, e_h2


def solve_qite_step(expectations: Mapping[str, float] | np.ndarray, terms: Sequence[tuple[float, str]],
                    domain: Sequence[int], lam: float = DEFAULT_LAMBDA, *, basis_k: int | None = None,
                    mean_field: bool = False) -> QiteSolution:
    """Least-squares QITE generator on ``domain`` (local labels, ``domain[0]`` least significant).

    ``terms`` holds ``(coeff, local_label)`` pairs of the Hamiltonian piece.
    """
    m = len(domain)
    if isinstance(expectations, np.ndarray):
        ev, filled = np.asarray(expectations, dtype=float), []
    else:
        ev, filled = expectation_vector(expectations, m, mean_field=mean_field)
    hv = _h_vector(terms, m)
    labels = basis_labels(m, basis_k)
    bidx = np.array([label_index(lbl) for lbl in labels], dtype=np.int64)
    s, b, e_h, e_h2 = qite_system(ev, hv, m, bidx)
    a = np.linalg.solve(s + lam * np.eye(len(labels)), b)
    var = e_h2 - e_h**2
    residual = float(max(var - 2 * a @ b + a @ s @ a, 0.0))
    mats = local_basis_matrices(m)[bidx]
    gen = np.tensordot(a, mats, axes=1)
    gen = 0.5 * (gen + gen.conj().T)
    return QiteSolution(tuple(domain), labels, a, gen, residual, lam, float(var), filled)


def exact_domain_expectations(state: StateVector, domain: Sequence[int]) -> np.ndarray:
    rho = reduced_density_matrix(state, domain)
    return np.array(list(rdm_expectations(rho).values()))


def local_terms(terms: Sequence[HamiltonianTerm], domain: Sequence[int]) -> list[tuple[float, str]]:
    out = []
    for t in terms:
        sign = -1.0 if t.pauli.phase == 2 else 1.0
        out.append((sign * t.coeff, t.local_label(domain)))
    return out


def qite_step_state(state: StateVector, terms: Sequence[HamiltonianTerm], domain: Sequence[int], dtau: float,
                    lam: float = DEFAULT_LAMBDA, basis_k: int | None = None) -> tuple[StateVector, QiteSolution]:
    """One exact-expectation QITE step applied directly to a statevector (driver fast path)."""
    ev = exact_domain_expectations(state, domain)
    sol = solve_qite_step(ev, local_terms(terms, domain), domain, lam, basis_k=basis_k)
    amps = apply_matrix(state.amplitudes, state.n_qubits, sol.step_unitary(dtau), domain)
    return StateVector(amps, state.n_qubits), sol


# -- adapt-H ---------------------------------------------------------------

def default_pool(g: CouplingGraph) -> list[HamiltonianTerm]:
    """All signed single-vertex and edge Paulis: +-(15 per edge + 3 per vertex)."""
    n = g.n_qubits
    pool = []
    for q in range(n):
        for c in "XYZ":
            for s in (1.0, -1.0):
                pool.append(HamiltonianTerm(s, PauliString.from_sparse({q: c}, n)))
    for u, v in g.edges:
        for lbl in local_basis(2)[1:]:
            for s in (1.0, -1.0):
                pool.append(HamiltonianTerm(s, PauliString.from_sparse({u: lbl[1], v: lbl[0]}, n)))
    return pool


@dataclass
class AdaptStep:
    term: HamiltonianTerm | None
    qubits: tuple[int, ...]
    unitary: np.ndarray | None
    scores: list[tuple[str, float]]
    stalled: bool


def adapt_h_scores(state: StateVector, pool: Sequence[HamiltonianTerm], dtau: float, *,
                   target: StateVector | None = None, hamiltonian: Sequence[HamiltonianTerm] | None = None,
                   lam: float = DEFAULT_LAMBDA) -> tuple[list[float], list[QiteSolution]]:
    """First-order objective gain of one QITE step with each candidate term.

    Fidelity: ``2 dtau Re(<psi|phi><phi|(-iA)|psi>)``; energy:
    ``-2 dtau Re<H psi|(-iA) psi>`` (positive means improvement).
    """
    if (target is None) == (hamiltonian is None):
        raise ValueError("choose exactly one objective: a target state or a Hamiltonian")
    if not pool:
        raise ValueError("empty pool")
    n = state.n_qubits
    psi = state.amplitudes
    if target is not None:
        phi = target.amplitudes
        ov = np.vdot(psi, phi)
    else:
        hpsi = hamiltonian_matrix(hamiltonian, n) @ psi
    cache: dict[tuple[int, ...], np.ndarray] = {}
    scores, sols = [], []
    for t in pool:
        dom = t.support
        if dom not in cache:
            cache[dom] = exact_domain_expectations(state, dom)
        sol = solve_qite_step(cache[dom], local_terms([t], dom), dom, lam)
        dpsi = -1j * apply_matrix(psi, n, sol.generator, dom)
        if target is not None:
            score = 2 * dtau * float((ov * np.vdot(phi, dpsi)).real)
        else:
            score = -2 * dtau * float(np.vdot(hpsi, dpsi).real)
        scores.append(score)
        sols.append(sol)
    return scores, sols


def adapt_h_step(state: StateVector, pool: Sequence[HamiltonianTerm], dtau: float, *,
                 target: StateVector | None = None, hamiltonian: Sequence[HamiltonianTerm] | None = None,
                 lam: float = DEFAULT_LAMBDA) -> AdaptStep:
    """Pick the pool term with the best first-order gain; signal a stall when nothing improves."""
    scores, sols = adapt_h_scores(state, pool, dtau, target=target, hamiltonian=hamiltonian, lam=lam)
    table = [(str(t), s) for t, s in zip(pool, scores)]
    best = int(np.argmax(scores))
    if scores[best] <= STALL_TOL:
        return AdaptStep(None, (), None, table, True)
    sol = sols[best]
    return AdaptStep(pool[best], sol.domain, sol.step_unitary(dtau), table, False)


def imaginary_time_state(state: StateVector, h: np.ndarray, tau: float) -> StateVector:
    """Normalized ``exp(-tau h)|psi>`` by dense diagonalization (oracle)."""
    vals, vecs = np.linalg.eigh(h)
    out = vecs @ (np.exp(-tau * (vals - vals.min())) * (vecs.conj().T @ state.amplitudes))
    return StateVector(out / np.linalg.norm(out), state.n_qubits)

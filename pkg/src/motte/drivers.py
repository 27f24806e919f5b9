"""User-side programs on top of a session: circuit emulation, GHZ, QITE and adapt-H drivers, benchmarks."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from scipy.stats import unitary_group

from .backend import StateVector, apply_matrix, derive_rng
from .deduction import GateRequest, gate_fidelity
from .graph import CouplingGraph
from .paulis import PauliString, local_basis
from .qite import (HamiltonianTerm, QiteRequest, adapt_h_step, default_pool, energy,
                   hamiltonian_matrix, qite_step_state)
from .session import MotteSession, SessionConfig
from .spectral import SpectralRdm, rdm_expectations, rdm_matrix
from .tomography import schedule_settings

_S2 = np.sqrt(0.5)
# two-qubit matrices use the local convention: qubits[0] is the low bit
NAMED_GATES: dict[str, np.ndarray] = {
    "I": np.eye(2, dtype=complex),
    "H": np.array([[_S2, _S2], [_S2, -_S2]], dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.diag([1, -1]).astype(complex),
    "S": np.diag([1, 1j]).astype(complex),
    "T": np.diag([1, np.exp(1j * np.pi / 4)]).astype(complex),
    # control = qubits[0], target = qubits[1]
    "CNOT": np.array([[1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0], [0, 1, 0, 0]], dtype=complex),
    "CZ": np.diag([1, 1, 1, -1]).astype(complex),
}
EMULATION_METHODS = ("density-matrix", "eigenstate", "combined-k2")


@dataclass
class PlanGate:
    name: str
    qubits: tuple[int, ...]
    matrix: np.ndarray
    method: str = "density-matrix"

    def __post_init__(self):
        self.qubits = tuple(int(q) for q in self.qubits)
        if self.method not in EMULATION_METHODS:
            raise ValueError(f"unknown emulation method {self.method!r}")
        if self.matrix.shape != (2 ** len(self.qubits),) * 2:
            raise ValueError(f"gate {self.name} does not fit qubits {self.qubits}")


@dataclass
class EmulationPlan:
    n_qubits: int
    gates: list[PlanGate] = field(default_factory=list)

    def check(self, g: CouplingGraph) -> None:
        for gate in self.gates:
            if any(not 0 <= q < g.n_qubits for q in gate.qubits):
                raise ValueError(f"{gate.name} on {gate.qubits} outside the graph")
            if len(gate.qubits) == 2 and not g.has_edge(*gate.qubits):
                raise ValueError(f"{gate.name} on {gate.qubits}: not an edge")
            if len(gate.qubits) > 2:
                raise ValueError("plan gates act on one or two qubits")

    def ideal_state(self) -> StateVector:
        amps = StateVector.zero(self.n_qubits).amplitudes.copy()
        for gate in self.gates:
            amps = apply_matrix(amps, self.n_qubits, gate.matrix, gate.qubits)
        return StateVector(amps, self.n_qubits)


def plan_gate(name: str, qubits: Sequence[int], method: str = "density-matrix",
              matrix: np.ndarray | None = None) -> PlanGate:
    if name == "custom":
        if matrix is None:
            raise ValueError("custom gates need a matrix")
        m = np.asarray(matrix, dtype=complex)
        if np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))) > 1e-10:
            raise ValueError("custom gate matrix is not unitary")
        return PlanGate("custom", tuple(qubits), m, method)
    if name not in NAMED_GATES:
        raise ValueError(f"unknown gate {name!r}; expected one of {sorted(NAMED_GATES)} or 'custom'")
    return PlanGate(name, tuple(qubits), NAMED_GATES[name], method)


def _matrix_from_json(data: Any) -> np.ndarray:
    def entry(z):
        if isinstance(z, (list, tuple)):
            if len(z) != 2:
                raise ValueError("complex entries are [re, im] pairs")
            return complex(z[0], z[1])
        return complex(z)
    return np.array([[entry(z) for z in row] for row in data], dtype=complex)


def load_plan(data: Any, n_qubits: int, default_method: str = "density-matrix") -> EmulationPlan:
    """Plan from JSON: a list of gate entries or ``{"method": ..., "gates": [...]}``."""
    if isinstance(data, dict):
        extra = set(data) - {"method", "gates"}
        if extra:
            raise ValueError(f"unknown plan keys {sorted(extra)}")
        default_method = data.get("method", default_method)
        entries = data["gates"]
    else:
        entries = data
    gates = []
    for i, e in enumerate(entries):
        extra = set(e) - {"gate", "qubits", "matrix", "method"}
        if extra:
            raise ValueError(f"plan entry {i}: unknown keys {sorted(extra)}")
        matrix = _matrix_from_json(e["matrix"]) if "matrix" in e else None
        gates.append(plan_gate(e["gate"], e["qubits"], e.get("method", default_method), matrix))
    return EmulationPlan(n_qubits, gates)


def ghz_plan(n: int, method: str = "density-matrix") -> EmulationPlan:
    """H on qubit 0, then a CNOT chain 0->1->...->n-1.

    On two qubits no idle probe exists for the CNOT, so it falls back to the
    eigenstate method (exact here because the state is the top eigenvector).
    """
    if n < 2:
        raise ValueError("GHZ needs at least two qubits")
    gates = [plan_gate("H", (0,), method)]
    for q in range(n - 1):
        m = method if n > 2 else "eigenstate"
        gates.append(plan_gate("CNOT", (q, q + 1), m))
    return EmulationPlan(n, gates)


def ghz_state(n: int) -> StateVector:
    amps = np.zeros(2**n, dtype=complex)
    amps[0] = amps[-1] = _S2
    return StateVector(amps, n)


# -- the user-side classical step -----------------------------------------

def scope_label(local_label: str, scope: Sequence[int]) -> str:
    """Sparse ``LETTERS@q0,q1,...`` form of a local label (``scope[0]`` is the rightmost letter)."""
    m = len(scope)
    letters = "".join(local_label[m - 1 - i] for i in range(m))
    return f"{letters}@{','.join(str(q) for q in scope)}"


def conjugated_targets(report, unitary: np.ndarray, gate_qubits: Sequence[int],
                       probe: int | None = None) -> dict[str, float]:
    """Targets the user derives by conjugating the reported RDM with the intended gate.

    A noisy report rotated by a non-Clifford gate can give values just past
    +-1; those are clipped (a small intention error). Clifford gates only
    permute and negate expectations, so they are never clipped.
    """
    scope = tuple(gate_qubits) + ((probe,) if probe is not None else ())
    m = len(scope)
    rho = rdm_matrix(report.local(scope), m)
    u = np.asarray(unitary, dtype=complex)
    if probe is not None:
        u = np.kron(np.eye(2), u)
    out = rdm_expectations(u @ rho @ u.conj().T)
    return {scope_label(lbl, scope): float(np.clip(v, -1.0, 1.0)) for lbl, v in out.items() if set(lbl) != {"I"}}


def pick_probe(g: CouplingGraph, gate_qubits: Sequence[int], busy: set[int]) -> int | None:
    """Lowest-index neighbor of the gate that is outside the gate and not busy."""
    cands = sorted({w for q in gate_qubits for w in g.neighbors(q)} - set(gate_qubits) - busy)
    return cands[0] if cands else None


# -- combined gates at k=2 ---------------------------------------------------

@dataclass
class Template:
    """Stored (init, target) expectation tables on two qubits; unspecified entries are zero."""

    init: dict[str, float]
    target: dict[str, float]

    def rdms(self) -> tuple[SpectralRdm, SpectralRdm]:
        full_i = {lbl: self.init.get(lbl, 0.0) for lbl in local_basis(2)[1:]}
        full_t = {lbl: self.target.get(lbl, 0.0) for lbl in local_basis(2)[1:]}
        return (SpectralRdm.from_matrix(rdm_matrix(full_i, 2), (0, 1)),
                SpectralRdm.from_matrix(rdm_matrix(full_t, 2), (0, 1)))


# <Z (x) I> = <I (x) X> = <Z (x) X> = 1  ->  <Z (x) Z> = <X (x) X> = 1
CNOT_TEMPLATE = Template({"ZI": 1.0, "IX": 1.0, "ZX": 1.0}, {"ZZ": 1.0, "XX": 1.0})


def combined_k2_gate(session: MotteSession, template: Template, edge: Sequence[int]) -> dict:
    """Apply a stored template on ``edge`` against the latest report."""
    if session.config.k != 2:
        raise ValueError("combined gates are defined for k=2 sessions")
    report = session.latest_report if session.latest_report is not None else session.tomography()
    init, target = template.rdms()
    return session.apply_template(init, target, edge, report.report_id)


# -- circuit emulation ---------------------------------------------------------

@dataclass
class EmulationResult:
    fidelity: float
    gate_fidelities: list[float]
    layers: list[list[int]]
    retries: int
    histogram: dict[str, int] | None
    cost: dict
    gate_methods: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"schema": "motte.emulation.v1", "fidelity": self.fidelity,
                "gate_fidelities": self.gate_fidelities, "gate_methods": self.gate_methods,
                "layers": self.layers, "retries": self.retries,
                "histogram": self.histogram, "cost": self.cost}


def pack_layers(plan: EmulationPlan, g: CouplingGraph) -> list[list[tuple[int, int | None]]]:
    """Greedy layers of consecutive plan gates with disjoint scopes (gate plus probe)."""
    layers: list[list[tuple[int, int | None]]] = []
    current: list[tuple[int, int | None]] = []
    busy: set[int] = set()
    for i, gate in enumerate(plan.gates):
        needs_probe = gate.method == "density-matrix"
        for attempt in (0, 1):
            if set(gate.qubits) & busy:
                probe, ok = None, False
            else:
                probe = pick_probe(g, gate.qubits, busy) if needs_probe else None
                ok = probe is not None or not needs_probe
            if ok:
                current.append((i, probe))
                busy |= set(gate.qubits) | ({probe} if probe is not None else set())
                break
            if attempt == 1 or not current:
                raise ValueError(f"gate {i} ({gate.name} on {gate.qubits}) has no adjacent probe qubit")
            layers.append(current)
            current, busy = [], set()
    if current:
        layers.append(current)
    return layers


def emulate_circuit(session: MotteSession, plan: EmulationPlan, *, shots: int | None = None,
                    log: Callable[[str], None] | None = None) -> EmulationResult:
    """Run every plan gate through the interface, one tomography per layer.

    ``log`` receives each layer's report table and each appended gate's
    fidelity with its ideal matrix.
    """
    g = session.graph
    plan.check(g)
    for gate in plan.gates:
        need = len(gate.qubits) + (1 if gate.method == "density-matrix" else 0)
        if gate.method != "combined-k2" and need > session.config.k:
            raise ValueError(f"{gate.method} gate on {gate.qubits} needs k >= {need}")
    layers = pack_layers(plan, g)
    gate_fids: list[float] = []
    retries = 0
    for layer in layers:
        report = session.tomography()
        if log is not None:
            log(report.format_table(max_rows=24))
        for i, probe in layer:
            gate = plan.gates[i]
            if gate.method == "combined-k2":
                summary = combined_k2_gate(session, CNOT_TEMPLATE, gate.qubits)
            else:
                def build(report, gate=gate, probe=probe, i=i):
                    targets = conjugated_targets(report, gate.matrix, gate.qubits, probe)
                    return GateRequest(gate.method, gate.qubits, targets, probe, request_id=f"plan.{i}")
                summary = session.apply_with_retry(build)
                retries += summary["retries"]
            rec = session.ledger.gates[-1]
            ideal = gate.matrix if len(rec.qubits) == len(gate.qubits) else np.kron(np.eye(2), gate.matrix)
            gate_fids.append(gate_fidelity(rec.unitary, ideal))
            if log is not None:
                log(f"gate {i}: {gate.name} on {gate.qubits} via {gate.method}, "
                    f"|tr(U^dag U_ideal)|/d = {gate_fids[-1]:.12f}")
    fid = session.oracle_state().fidelity(plan.ideal_state())
    hist = None
    cost = session.cost_report()
    if shots:
        out = session.finalize(shots)
        hist, cost = out["histogram"], out["cost"]
    methods = [plan.gates[i].method for layer in layers for i, _ in layer]
    order = [[i for i, _ in layer] for layer in layers]
    return EmulationResult(fid, gate_fids, order, retries, hist, cost, methods)


def random_plan(g: CouplingGraph, n_gates: int, rng: np.random.Generator, method: str = "density-matrix"
                ) -> EmulationPlan:
    """Random 1- and 2-qubit Haar gates on vertices and edges of ``g``."""
    gates = []
    for _ in range(n_gates):
        if g.edges and rng.random() < 0.5:
            e = g.edges[rng.integers(len(g.edges))]
            qubits = tuple(e) if rng.random() < 0.5 else (e[1], e[0])
            gates.append(plan_gate("custom", qubits, method, unitary_group.rvs(4, random_state=rng)))
        else:
            q = int(rng.integers(g.n_qubits))
            gates.append(plan_gate("custom", (q,), method, unitary_group.rvs(2, random_state=rng)))
    return EmulationPlan(g.n_qubits, gates)


def bench_plan(n: int, depth: int, rng: np.random.Generator) -> EmulationPlan:
    """Brickwork of random 2-qubit gates on a path, two gates per layer, each with an idle probe."""
    if n != 6:
        raise ValueError("the overhead bench uses a 6-qubit path")
    pattern = [((0, 1), (3, 4)), ((1, 2), (4, 5))]
    gates = []
    for d in range(depth):
        for edge in pattern[d % 2]:
            gates.append(plan_gate("custom", edge, "density-matrix", unitary_group.rvs(4, random_state=rng)))
    return EmulationPlan(n, gates)


def bench_overhead(depths: Sequence[int], delta: float = 0.1, seed: int = 0, n: int = 6) -> list[dict]:
    rows = []
    for depth in depths:
        rng = derive_rng(seed, depth)
        plan = bench_plan(n, depth, rng)
        session = MotteSession(SessionConfig(CouplingGraph.path(n), k=3, delta=delta, seed=seed + depth))
        t0 = time.perf_counter()
        res = emulate_circuit(session, plan)
        wall = time.perf_counter() - t0
        c = session.cost
        rows.append({"D": session.ledger.depth, "rounds": c.tomography_rounds, "retry_rounds": c.retry_rounds,
                     "settings": c.total_settings, "total_shots": c.total_shots,
                     "circuit_layers": c.circuit_layers, "shot_layers": c.shot_layers,
                     "fidelity": res.fidelity, "wall_s": wall})
    return rows


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])


def settings_scaling(ns: Sequence[int], k: int = 2) -> list[tuple[int, int]]:
    return [(n, len(schedule_settings(CouplingGraph.complete(n), k))) for n in ns]


# -- QITE drivers ------------------------------------------------------------

def tfim_hamiltonian(n: int, g: float = 1.0) -> list[HamiltonianTerm]:
    """``-sum Z_i Z_{i+1} - g sum X_i`` on an open chain."""
    terms = [HamiltonianTerm(-1.0, PauliString.from_sparse({i: "Z", i + 1: "Z"}, n)) for i in range(n - 1)]
    terms += [HamiltonianTerm(-g, PauliString.from_sparse({i: "X"}, n)) for i in range(n)]
    return terms


def exact_ground_energy(terms: Sequence[HamiltonianTerm], n: int) -> float:
    return float(np.linalg.eigvalsh(hamiltonian_matrix(terms, n))[0])


def product_state(n: int, single: np.ndarray) -> StateVector:
    amps = np.array([1.0 + 0j])
    for _ in range(n):
        amps = np.kron(single, amps)
    return StateVector(amps, n)


@dataclass
class QiteRun:
    trajectory: list[tuple[int, float]]
    final_state: StateVector
    steps: int
    n_gates: int

    @property
    def final_energy(self) -> float:
        return self.trajectory[-1][1]


def _domain(term: HamiltonianTerm, n: int, domain_k: int | None) -> tuple[tuple[int, ...], int | None]:
    if domain_k is None:
        return tuple(range(n)), None
    return term.support, domain_k


def run_qite_groundstate(terms: Sequence[HamiltonianTerm], n: int, beta: float, dtau: float, *,
                         domain_k: int | None = None, initial: StateVector | None = None,
                         session: MotteSession | None = None) -> QiteRun:
    """First-order Trotter sweep: one QITE step per term per round, ``round(beta / dtau)`` rounds.

    ``domain_k=None`` uses the full register as every term's domain; an
    integer keeps each term's own support and truncates the generator basis
    to at most ``domain_k``-body Paulis (the mean-field-like regime). With a
    ``session`` every step goes through tomography; otherwise exact
    expectations are used directly (driver fast path).
    """
    rounds = int(round(beta / dtau))
    if session is not None:
        state = session.oracle_state()
        traj = [(0, energy(state, terms))]
        for r in range(1, rounds + 1):
            for t in terms:
                dom, bk = _domain(t, n, domain_k)
                mean_field = domain_k is not None and len(dom) > session.config.k
                session.apply_qite(QiteRequest([t], dom, dtau, 1, bk, mean_field))
            traj.append((r, energy(session.oracle_state(), terms)))
        return QiteRun(traj, session.oracle_state(), rounds * len(terms), len(session.ledger))
    state = initial if initial is not None else StateVector.zero(n)
    traj = [(0, energy(state, terms))]
    for r in range(1, rounds + 1):
        for t in terms:
            dom, bk = _domain(t, n, domain_k)
            state, _ = qite_step_state(state, [t], dom, dtau, basis_k=bk)
        traj.append((r, energy(state, terms)))
    return QiteRun(traj, state, rounds * len(terms), rounds * len(terms))


def single_qubit_ite_curve(dtau: float, rounds: int) -> list[float]:
    """``<Z>`` of exact imaginary-time evolution of ``|+>`` under ``h = Z``: ``-tanh(2 tau)``."""
    return [-float(np.tanh(2 * dtau * r)) for r in range(rounds + 1)]


def single_qubit_qite_map(dtau: float, rounds: int) -> list[float]:
    """Closed form of the first-order QITE iteration for ``h = Z`` from ``|+>``.

    On the X-Z great circle the generator is ``sin(theta) Y``, so the Bloch
    angle follows ``theta -> theta + 2 dtau sin(theta)``
    with ``theta`` the polar angle (``<Z> = cos(theta)``).
    """
    th = np.pi / 2
    out = [0.0]
    for _ in range(rounds):
        th = th + 2 * dtau * np.sin(th)
        out.append(float(np.cos(th)))
    return out


# -- adapt-H ---------------------------------------------------------------------

@dataclass
class AdaptRun:
    trajectory: list[tuple[int, float]]
    steps: int
    reached: bool
    stalled: bool
    chosen: list[str]
    waypoints_reached: int = 0


def run_adapt_h_prep(target: StateVector, dtau: float, budget: int, *, threshold: float = 0.99,
                     pool: Sequence[HamiltonianTerm] | None = None, graph: CouplingGraph | None = None,
                     initial: StateVector | None = None, waypoints: Sequence[StateVector] = (),
                     waypoint_threshold: float = 0.999) -> AdaptRun:
    """Greedy adapt-H loop on the oracle backend until ``threshold`` fidelity or ``budget`` steps.

    When no pool term improves the fidelity to first order the loop stalls
    and the run stops. ``waypoints`` are intermediate targets visited in
    order (each to ``waypoint_threshold``) before the final target; the
    trajectory always records the fidelity with the final target.
    """
    n = target.n_qubits
    g = graph if graph is not None else CouplingGraph.path(n)
    pool = list(pool) if pool is not None else default_pool(g)
    state = initial if initial is not None else StateVector.zero(n)
    legs = [(w, waypoint_threshold) for w in waypoints] + [(target, threshold)]
    traj = [(0, state.fidelity(target))]
    chosen = []
    steps = 0
    stalled = False
    done = 0
    for goal, thr in legs:
        fid = state.fidelity(goal)
        while fid < thr and steps < budget:
            step = adapt_h_step(state, pool, dtau, target=goal)
            if step.stalled:
                stalled = True
                break
            state = StateVector(apply_matrix(state.amplitudes, n, step.unitary, step.qubits), n)
            steps += 1
            fid = state.fidelity(goal)
            traj.append((steps, state.fidelity(target)))
            chosen.append(str(step.term))
        if fid < thr:
            break
        done += 1
    final = state.fidelity(target)
    return AdaptRun(traj, steps, final >= threshold, stalled, chosen, min(done, len(waypoints)))


def ghz_waypoints(n: int) -> list[StateVector]:
    """Intermediate states of the H + CNOT-chain GHZ circuit (excluding the final state)."""
    plan = ghz_plan(n)
    out = []
    for i in range(1, len(plan.gates)):
        out.append(EmulationPlan(n, plan.gates[:i]).ideal_state())
    return out


def haar_state(n: int, rng: np.random.Generator) -> StateVector:
    v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return StateVector(v / np.linalg.norm(v), n)


def write_trajectory_csv(path: str | Path, rows: Sequence[tuple[int, float]], value_name: str = "value") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", value_name])
        for r, v in rows:
            w.writerow([r, f"{v:.12g}"])


def dump_json(path: str | Path, data: dict) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")

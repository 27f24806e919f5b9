"""Turn a tomography report plus target expectations into a unitary."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .paulis import PauliString, local_basis
from .spectral import (DEGENERACY_TOL, SpectralRdm, nearest_unitary, principal_power,
                       rdm_matrix)

METHODS = ("eigenstate", "density-matrix", "qite")
TAU_OVERLAP = 1e-6
SCHMIDT_TOL = 1e-9
RANK_TOL = 1e-6
TARGET_SLACK = 1e-9  # rounding slack on the [-1, 1] range of target values


class RetryTomography(RuntimeError):
    """The report is too degenerate to fix the gate; a fresh tomography is needed."""


class DeductionFailed(RuntimeError):
    """Deduction kept failing after the configured number of retries."""


@dataclass
class GateRequest:
    method: str
    gate_qubits: tuple[int, ...]
    targets: dict[str, float] = field(default_factory=dict)
    probe: int | None = None
    f: float = 1.0
    report_id: int | None = None
    request_id: str | None = None
    qite: dict[str, Any] | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        self.gate_qubits = tuple(int(q) for q in self.gate_qubits)
        if self.method != "qite" and len(self.gate_qubits) not in (1, 2):
            raise ValueError("gates act on one vertex or one edge")
        if len(set(self.gate_qubits)) != len(self.gate_qubits):
            raise ValueError(f"repeated qubit in {self.gate_qubits}")
        if self.method == "density-matrix":
            if self.probe is None:
                raise ValueError("density-matrix requests need a probe qubit")
            self.probe = int(self.probe)
            if self.probe in self.gate_qubits:
                raise ValueError("probe must differ from the gate qubits")
        if not 0.0 <= self.f <= 1.0:
            raise ValueError("fraction f must lie in [0, 1]")
        for lbl, v in self.targets.items():
            if not abs(float(v)) <= 1.0 + TARGET_SLACK:
                raise ValueError(f"target <{lbl}> = {v} outside [-1, 1]")
        self.targets = {str(k): float(v) for k, v in self.targets.items()}

    @property
    def scope(self) -> tuple[int, ...]:
        """RDM qubits in local order: gate qubits first (low bits), then the probe."""
        if self.method == "density-matrix":
            return (*self.gate_qubits, self.probe)
        return self.gate_qubits

    def to_json(self) -> dict:
        out: dict[str, Any] = {"method": self.method, "gate_qubits": list(self.gate_qubits)}
        if self.probe is not None:
            out["probe"] = self.probe
        out["targets"] = dict(self.targets)
        out["f"] = self.f
        if self.report_id is not None:
            out["report_id"] = self.report_id
        if self.request_id is not None:
            out["request_id"] = self.request_id
        if self.qite is not None:
            out["qite"] = self.qite
        return out

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "GateRequest":
        allowed = {"method", "gate_qubits", "probe", "targets", "f", "report_id", "request_id", "qite"}
        extra = set(data) - allowed
        if extra:
            raise ValueError(f"unknown request keys {sorted(extra)}")
        if "method" not in data or "gate_qubits" not in data:
            raise ValueError("request needs 'method' and 'gate_qubits'")
        return cls(data["method"], tuple(data["gate_qubits"]), dict(data.get("targets", {})),
                   data.get("probe"), float(data.get("f", 1.0)), data.get("report_id"),
                   data.get("request_id"), data.get("qite"))


@dataclass
class DeducedGate:
    unitary: np.ndarray
    method: str
    qubits: tuple[int, ...]
    diagnostics: dict[str, Any] = field(default_factory=dict)


def _parse_target_label(text: str, n: int) -> tuple[dict[int, str], float]:
    """Sparse ``{qubit: letter}`` and sign for ``"XZ@0,1"``, ``"-ZZI"`` style labels."""
    text = text.strip()
    if "@" in text:
        letters, _, qs = text.partition("@")
        p = PauliString.parse(letters)
        qubits = [int(q) for q in qs.split(",")]
        if len(qubits) != len(p.label):
            raise ValueError(f"label {text!r}: {len(p.label)} letters for {len(qubits)} qubits")
        ops = {q: c for q, c in zip(qubits, p.label) if c != "I"}
    else:
        p = PauliString.parse(text)
        if len(p.label) != n:
            raise ValueError(f"label {text!r} has {len(p.label)} letters on a {n}-qubit register")
        ops = {q: p.letter(q) for q in p.support}
    sign = {0: 1.0, 2: -1.0}.get(int(p.phase))
    if sign is None:
        raise ValueError(f"target label {text!r} is not Hermitian")
    return ops, sign


def local_targets(targets: Mapping[str, float], scope: Sequence[int], n: int) -> dict[str, float]:
    """Map request targets onto local labels of ``scope`` (``scope[0]`` least significant).

    Labels are full-register strings (``"IZX"``), sparse strings (``"ZX@1,0"``,
    letter i on the i-th listed qubit) or, when shorter than the register,
    strings over the sorted scope with the highest qubit leftmost.
    """
    scope = tuple(scope)
    m = len(scope)
    sorted_scope = sorted(scope)
    out: dict[str, float] = {}
    for text, value in targets.items():
        if "@" not in text and len(text.lstrip("+-i")) == m and m != n:
            p = PauliString.parse(text)
            ops = {sorted_scope[i]: p.letter(i) for i in range(m) if p.letter(i) != "I"}
            sign = {0: 1.0, 2: -1.0}.get(int(p.phase))
            if sign is None:
                raise ValueError(f"target label {text!r} is not Hermitian")
        else:
            ops, sign = _parse_target_label(text, n)
        if not set(ops) <= set(scope):
            raise ValueError(f"target {text!r} reaches outside the gate scope {sorted_scope}")
        if not ops:
            continue
        lbl = "".join(ops.get(q, "I") for q in reversed(scope))
        out[lbl] = sign * float(value)
    return out


def complete_target(report, req: GateRequest) -> SpectralRdm:
    """Target RDM: requested values where given, current estimates elsewhere."""
    scope = req.scope
    if not scope:
        raise ValueError("empty qubit set")
    local = report.local(scope)
    missing = [lbl for lbl in local_basis(len(scope)) if lbl not in local]
    if missing:
        raise KeyError(f"report lacks {len(missing)} Paulis on {scope} (k={report.k})")
    local.update(local_targets(req.targets, scope, report.n_qubits))
    n_gate = len(req.gate_qubits) if req.method == "density-matrix" else None
    return SpectralRdm.from_matrix(rdm_matrix(local, len(scope)), scope, n_gate)


def init_rdm(report, req: GateRequest) -> SpectralRdm:
    scope = req.scope
    local = report.local(scope)
    n_gate = len(req.gate_qubits) if req.method == "density-matrix" else None
    return SpectralRdm.from_matrix(rdm_matrix(local, len(scope)), scope, n_gate)


def _clusters(vals: np.ndarray) -> list[tuple[int, int]]:
    out = []
    j = 0
    while j < len(vals):
        e = j + 1
        while e < len(vals) and vals[e - 1] - vals[e] < DEGENERACY_TOL:
            e += 1
        out.append((j, e))
        j = e
    return out


def deduce_eigenstate_gate(init: SpectralRdm, target: SpectralRdm, f: float = 1.0,
                           *, nudge: bool = False) -> DeducedGate:
    """Map the j-th init eigenvector onto the j-th target eigenvector, then take ``U**f``."""
    if init.qubits != target.qubits:
        raise ValueError("init and target RDMs live on different qubits")
    ivec = init.eigenvectors
    tvec = target.eigenvectors.copy()
    clusters = _clusters(target.raw_eigenvalues)
    for j, e in clusters:
        if e - j < 2:
            continue
        basis = target.eigenvectors[:, j:e]
        proj = basis @ (basis.conj().T @ ivec[:, j:e])
        # ordered Gram-Schmidt in rank order
        for c in range(e - j):
            w = proj[:, c].copy()
            for b in range(c):
                w -= np.vdot(tvec[:, j + b], w) * tvec[:, j + b]
            nrm = np.linalg.norm(w)
            if nrm < RANK_TOL:
                raise RetryTomography(f"degenerate target cluster at ranks {j}..{e - 1} lost rank")
            tvec[:, j + c] = w / nrm
    u_tilde = tvec @ ivec.conj().T
    u_tilde = nearest_unitary(u_tilde)
    u = principal_power(u_tilde, f, nudge=nudge)
    diag = {
        "init_eigenvalues": init.raw_eigenvalues.tolist(),
        "target_eigenvalues": target.raw_eigenvalues.tolist(),
        "target_clusters": [list(c) for c in clusters if c[1] - c[0] > 1],
        "repair": target.repair,
        "u_tilde": u_tilde,
    }
    return DeducedGate(u, "eigenstate", init.qubits, diag)


def _gate_states(rdm: SpectralRdm) -> tuple[list[np.ndarray], list[tuple[int, int]], list[bool]]:
    states, keys, product = [], [], []
    for j, sd in enumerate(rdm.schmidt):
        product.append(sd.is_product)
        cols = (0,) if sd.is_product else range(sd.left.shape[1])
        for c in cols:
            states.append(sd.left[:, c])
            keys.append((j, c))
    return states, keys, product


def _check_spectrum(rdm: SpectralRdm, name: str) -> None:
    gaps = -np.diff(rdm.raw_eigenvalues)
    if gaps.size and gaps.min() < DEGENERACY_TOL:
        raise RetryTomography(f"{name} RDM eigenvalues collide (gap {gaps.min():.2e})")
    for j, sd in enumerate(rdm.schmidt):
        if not sd.is_product and sd.coefficients.size > 1 and \
                np.min(-np.diff(sd.coefficients)) < SCHMIDT_TOL:
            raise RetryTomography(f"{name} eigenvector {j} has colliding Schmidt coefficients")


def relative_phases(init_states: Sequence[np.ndarray], target_states: Sequence[np.ndarray],
                    ref: int = 0) -> np.ndarray:
    """``<b_r|b_j> / <a_r|a_j>`` for every j.

    Equals ``exp(i(theta_j - theta_r))`` when ``b_j = exp(i theta_j) U a_j``.
    """
    out = np.empty(len(init_states), dtype=complex)
    for j, (a, b) in enumerate(zip(init_states, target_states)):
        den = np.vdot(init_states[ref], a)
        if abs(den) < TAU_OVERLAP:
            raise ZeroDivisionError(f"states {ref} and {j} are (nearly) orthogonal")
        out[j] = np.vdot(target_states[ref], b) / den
    return out


def verify_phase_identity(init_states: Sequence[np.ndarray], target_states: Sequence[np.ndarray],
                          unitary: np.ndarray, ref: int = 0) -> float:
    """Largest deviation between recovered ratios and the phases implied by ``unitary``."""
    ratios = relative_phases(init_states, target_states, ref)
    u = np.asarray(unitary)
    true = np.array([np.vdot(u @ a, b) for a, b in zip(init_states, target_states)])
    true = true / np.abs(true)
    return float(np.max(np.abs(ratios - true / true[ref])))


def _spanning_phases(a: np.ndarray, b: np.ndarray, ref: int) -> tuple[np.ndarray, float]:
    """Relative phases propagated along a maximum-overlap spanning tree rooted at ``ref``."""
    n = a.shape[1]
    ga = np.abs(a.conj().T @ a)
    np.fill_diagonal(ga, 0.0)
    phase = np.zeros(n, dtype=complex)
    phase[ref] = 1.0
    in_tree = np.zeros(n, dtype=bool)
    in_tree[ref] = True
    best = ga[ref].copy()
    parent = np.full(n, ref)
    weakest = np.inf
    for _ in range(n - 1):
        cand = np.where(in_tree, -1.0, best)
        q = int(np.argmax(cand))
        if cand[q] < TAU_OVERLAP:
            raise RetryTomography("overlap graph of the extracted states is disconnected")
        p = parent[q]
        weakest = min(weakest, cand[q])
        ratio = np.vdot(b[:, p], b[:, q]) / np.vdot(a[:, p], a[:, q])
        phase[q] = phase[p] * ratio / abs(ratio)
        in_tree[q] = True
        upd = (ga[q] > best) & ~in_tree
        best[upd] = ga[q][upd]
        parent[upd] = q
    return phase, float(weakest)


def deduce_density_matrix_gate(init: SpectralRdm, target: SpectralRdm) -> DeducedGate:
    """Gate on the gate qubits from (gate + probe) RDMs via Schmidt states and relative phases."""
    if init.qubits != target.qubits:
        raise ValueError("init and target RDMs live on different qubits")
    if init.n_gate is None or target.n_gate != init.n_gate:
        raise ValueError("both RDMs need the same declared bipartition")
    m = init.n_gate
    if m not in (1, 2):
        raise ValueError("density-matrix deduction supports 1- or 2-qubit gates")
    _check_spectrum(init, "init")
    _check_spectrum(target, "target")
    a_list, a_keys, a_prod = _gate_states(init)
    b_list, b_keys, b_prod = _gate_states(target)
    if a_prod != b_prod or a_keys != b_keys:
        raise RetryTomography("product/entangled pattern differs between init and target")
    a = np.stack(a_list, axis=1)
    b = np.stack(b_list, axis=1)
    sv = np.linalg.svd(a, compute_uv=False)
    if sv.size < 2**m or sv[2**m - 1] < RANK_TOL:
        raise RetryTomography("extracted init states do not span the gate space")

    ov = np.abs(a.conj().T @ a)
    n = a.shape[1]
    mask = ~np.eye(n, dtype=bool)
    for i, (j, c) in enumerate(a_keys):
        for i2, (j2, _) in enumerate(a_keys):
            if j2 == j and i2 != i:
                mask[i, i2] = False  # Schmidt partners are orthogonal by construction
    mins = np.where(mask.any(axis=1), np.min(np.where(mask, ov, np.inf), axis=1), 0.0)
    ref = int(np.argmax(mins))
    phases, weakest = _spanning_phases(a, b, ref)
    b_fixed = b * phases.conj()[None, :]
    u = nearest_unitary(b_fixed @ np.linalg.pinv(a))
    residual = float(np.linalg.norm(u @ a - b_fixed))
    diag = {
        "reference": ref,
        "reference_min_overlap": float(mins[ref]),
        "weakest_tree_overlap": weakest,
        "n_states": n,
        "residual": residual,
        "init_gaps": (-np.diff(init.raw_eigenvalues)).tolist(),
        "repair": target.repair,
    }
    return DeducedGate(u, "density-matrix", init.qubits[:m], diag)


def gate_fidelity(u: np.ndarray, v: np.ndarray) -> float:
    """``|tr(u^dagger v)| / d``; one exactly when they agree up to global phase."""
    return float(abs(np.trace(np.asarray(u).conj().T @ np.asarray(v))) / np.asarray(u).shape[0])

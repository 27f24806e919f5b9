"""Measurement scheduling and estimation of graph-local Pauli expectations."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import permutations
from typing import Sequence

import numpy as np

from .backend import (CircuitLedger, StateVector, derive_rng, exact_expectation,
                      run_circuit, sample_setting_counts)
from .graph import CouplingGraph
from .paulis import PauliString, label_masks, local_labels

SUPPORTED_K = (1, 2, 3)


@dataclass(frozen=True)
class MeasurementSetting:
    """One basis letter per qubit (label order) and the Pauli labels it can estimate."""

    basis: str
    covers: tuple[str, ...] = ()

    def compatible(self, label: str) -> bool:
        return all(c == "I" or c == b for c, b in zip(label, self.basis))


@dataclass
class TomographyReport:
    estimates: dict[str, float]
    delta: float
    shots_per_setting: int
    settings_used: int
    total_shots: int
    k: int
    seed: int
    n_qubits: int
    graph: CouplingGraph
    exact: bool = False
    readout_flip: float = 0.0
    dither: float = 0.0
    scope: tuple[int, ...] | None = None
    report_id: int | None = None
    stderr: dict[str, float] = field(default_factory=dict)

    def __getitem__(self, key: str | PauliString) -> float:
        if isinstance(key, PauliString):
            if key.n_qubits != self.n_qubits:
                raise KeyError(f"{key} is not a {self.n_qubits}-qubit label")
            sign = {0: 1.0, 2: -1.0}.get(int(key.phase))
            if sign is None:
                raise KeyError("non-Hermitian Pauli strings have no real estimate")
            key_label = key.label
        else:
            sign, key_label = 1.0, key
        if key_label == "I" * self.n_qubits:
            return sign
        return sign * self.estimates[key_label]

    def __contains__(self, key: str) -> bool:
        return key in self.estimates or key == "I" * self.n_qubits

    def local(self, qubits: Sequence[int]) -> dict[str, float]:
        """Estimates supported in ``qubits``, relabelled locally (``qubits[0]`` least significant)."""
        n = self.n_qubits
        keep = [n - 1 - q for q in reversed(qubits)]
        outside = [i for i in range(n) if i not in set(keep)]
        out = {}
        for lbl, v in self.estimates.items():
            if all(lbl[i] == "I" for i in outside):
                out["".join(lbl[i] for i in keep)] = v
        out["I" * len(qubits)] = 1.0
        return out

    def to_json(self) -> dict:
        return {
            "schema": "motte.report.v1",
            "report_id": self.report_id,
            "k": self.k,
            "delta": self.delta,
            "settings": self.settings_used,
            "shots_per_setting": self.shots_per_setting,
            "total_shots": self.total_shots,
            "seed": self.seed,
            "exact": self.exact,
            "readout_flip": self.readout_flip,
            "dither": self.dither,
            "scope": list(self.scope) if self.scope is not None else None,
            "graph": self.graph.to_json(),
            "estimates": {k: float(f"{v:.6g}") for k, v in self.estimates.items()},
        }

    @classmethod
    def from_json(cls, data: dict) -> "TomographyReport":
        graph = CouplingGraph.from_json(data["graph"])
        return cls(
            estimates={k: float(v) for k, v in data["estimates"].items()},
            delta=float(data["delta"]), shots_per_setting=int(data.get("shots_per_setting", 0)),
            settings_used=int(data["settings"]), total_shots=int(data["total_shots"]),
            k=int(data["k"]), seed=int(data.get("seed", 0)), n_qubits=graph.n_qubits, graph=graph,
            exact=bool(data.get("exact", False)), readout_flip=float(data.get("readout_flip", 0.0)),
            dither=float(data.get("dither", 0.0)),
            scope=tuple(data["scope"]) if data.get("scope") is not None else None,
            report_id=data.get("report_id"),
        )

    def format_table(self, max_rows: int | None = None) -> str:
        rows = [f"{lbl}  {v:+.6f}" for lbl, v in self.estimates.items()]
        if max_rows is not None and len(rows) > max_rows:
            rows = rows[:max_rows] + [f"... ({len(self.estimates) - max_rows} more)"]
        head = (f"report {self.report_id}: k={self.k} delta={self.delta} "
                f"settings={self.settings_used} shots={self.total_shots}")
        return "\n".join([head, *rows])


def _scope_vertices(g: CouplingGraph, scope: Sequence[int] | None) -> list[int]:
    verts = list(range(g.n_qubits)) if scope is None else sorted(set(scope))
    if not g.is_connected(verts):
        raise ValueError(f"tomography scope {verts} is not connected")
    return verts


def _basis_string(n: int, letters: dict[int, str]) -> str:
    return "".join(letters.get(q, "Z") for q in range(n - 1, -1, -1))


def schedule_settings(g: CouplingGraph, k: int, scope: Sequence[int] | None = None) -> list[MeasurementSetting]:
    return list(_schedule(g, k, None if scope is None else tuple(sorted(set(scope)))))


@lru_cache(maxsize=64)
def _schedule(g: CouplingGraph, k: int, scope: tuple[int, ...] | None) -> tuple[MeasurementSetting, ...]:
    """Settings whose union covers every ``<= k``-body local Pauli.

    k=1 uses the three uniform settings. k=2 colors the graph and gives every
    qubit the binary code of its color: per code bit, six settings place
    letter ``a`` on bit-0 qubits and ``b != a`` on bit-1 qubits, and three
    uniform settings handle equal letters, so ``6 * ceil(log2(colors)) + 3``
    settings in total (nine on bipartite graphs). k=3 packs the required
    letter assignments greedily (first fit).
    """
    if k not in SUPPORTED_K:
        raise ValueError(f"scheduling supports k in {SUPPORTED_K}, got {k}")
    n = g.n_qubits
    verts = _scope_vertices(g, scope)
    assignments: list[dict[int, str]] = [{q: c for q in verts} for c in "XYZ"]
    if k == 2:
        colors = g.greedy_coloring(verts)
        n_colors = max(colors.values()) + 1
        bits = math.ceil(math.log2(n_colors)) if n_colors > 1 else 0
        for b in range(bits):
            for a, c in permutations("XYZ", 2):
                assignments.append({q: (c if (colors[q] >> b) & 1 else a) for q in verts})
    elif k == 3:
        assignments.extend(_greedy_pack(g, verts))
    labels = local_labels(g, k, verts)
    masks = [label_masks(lbl) for lbl in labels]
    settings = []
    for asg in assignments:
        basis = _basis_string(n, asg)
        bx, bz = label_masks(basis)
        covers = tuple(lbl for lbl, (x, z) in zip(labels, masks)
                       if (x | z) & (bx ^ x) == 0 and (x | z) & (bz ^ z) == 0)
        settings.append(MeasurementSetting(basis, covers))
    return tuple(settings)


def _greedy_pack(g: CouplingGraph, verts: list[int]) -> list[dict[int, str]]:
    required = []
    for lbl in local_labels(g, 3, verts):
        p = PauliString(lbl)
        if p.weight >= 2:
            required.append({q: p.letter(q) for q in p.support})
    required.sort(key=lambda r: (-len(r), sorted(r.items())))
    packed: list[dict[int, str]] = []
    for req in required:
        for asg in packed:
            if all(asg.get(q, c) == c for q, c in req.items()):
                asg.update(req)
                break
        else:
            packed.append(dict(req))
    return packed


def shots_for(delta: float, c_shot: float = 1.0) -> int:
    return math.ceil(c_shot / delta**2 - 1e-9)


def estimate_report(ledger: CircuitLedger | Sequence, g: CouplingGraph, k: int, delta: float, seed: int,
                    readout_flip: float = 0.0, *, c_shot: float = 1.0, scope: Sequence[int] | None = None,
                    oracle_state: StateVector | None = None, threads: int = 1) -> TomographyReport:
    """Run a ``k``-body tomography of the ledger state.

    ``delta == 0`` selects exact mode: the oracle values are reported and no
    shots are drawn. Otherwise every setting re-executes the ledger from
    ``|0...0>`` (unless an ``oracle_state`` is supplied) and draws
    ``ceil(c_shot / delta**2)`` shots; labels covered by several settings are
    pooled with shot weights.
    """
    if delta < 0:
        raise ValueError("delta must be non-negative")
    n = g.n_qubits
    verts = _scope_vertices(g, scope)
    scope_t = None if scope is None else tuple(verts)
    if delta == 0:
        state = oracle_state if oracle_state is not None else run_circuit(ledger, n)
        labels = local_labels(g, k, verts)
        estimates = {lbl: exact_expectation(state, PauliString(lbl)) for lbl in labels}
        n_settings = len(schedule_settings(g, k, verts)) if k in SUPPORTED_K else 0
        return TomographyReport(estimates, 0.0, 0, n_settings, 0, k, int(seed), n, g, exact=True,
                                readout_flip=readout_flip, scope=scope_t)

    settings = schedule_settings(g, k, verts)
    shots = shots_for(delta, c_shot)

    def run_setting(i: int):
        state = oracle_state if oracle_state is not None else run_circuit(ledger, n)
        return sample_setting_counts(state, settings[i].basis, shots, derive_rng(seed, i), readout_flip)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_setting, range(len(settings))))
    else:
        results = [run_setting(i) for i in range(len(settings))]

    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for setting, (vals, cnts) in zip(settings, results):
        for lbl in setting.covers:
            x, z = label_masks(lbl)
            parity = np.bitwise_count(vals & (x | z)).astype(np.int64) & 1
            sums[lbl] = sums.get(lbl, 0.0) + float(np.dot(cnts, 1 - 2 * parity))
            counts[lbl] = counts.get(lbl, 0) + shots
    estimates = {}
    stderr = {}
    for lbl in local_labels(g, k, verts):
        if lbl not in counts:
            raise RuntimeError(f"label {lbl} not covered by any setting")
        mean = sums[lbl] / counts[lbl]
        estimates[lbl] = mean
        stderr[lbl] = math.sqrt(max(1.0 - mean * mean, 0.0) / counts[lbl])
    return TomographyReport(estimates, float(delta), shots, len(settings), shots * len(settings), k,
                            int(seed), n, g, readout_flip=readout_flip, scope=scope_t, stderr=stderr)

"""The interface state machine: tomography, deduced gates, final measurement and cost accounting."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .backend import (CircuitLedger, GateRecord, StateVector, derive_rng, run_circuit,
                      sample_z_basis)
from .deduction import (DeductionFailed, GateRequest, RetryTomography, complete_target,
                        deduce_density_matrix_gate, deduce_eigenstate_gate, init_rdm)
from .graph import CouplingGraph
from .qite import QiteRequest, local_terms, solve_qite_step
from .spectral import SpectralRdm
from .tomography import SUPPORTED_K, TomographyReport, estimate_report, schedule_settings

TRANSCRIPT_SCHEMA = "motte.transcript.v1"


class ProtocolError(ValueError):
    """A call that the interface protocol does not allow."""


class StaleReport(ProtocolError):
    """The request does not reference the latest tomography (or its scope was already used)."""


class LocalityError(ProtocolError):
    """The request acts on qubits that are not graph-local."""


class ReplayMismatch(ValueError):
    """A replayed transcript did not reproduce a recorded ledger digest."""


@dataclass
class SessionConfig:
    graph: CouplingGraph
    k: int = 2
    delta: float = 0.0
    seed: int = 0
    readout_flip: float = 0.0
    c_shot: float = 1.0
    report_unitaries: bool = False
    strict: bool = True
    oracle: bool = False
    max_retries: int = 5
    retry_dither: float = 1e-6
    threads: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.delta > 0 and self.k not in SUPPORTED_K:
            raise ValueError(f"sampled tomography supports k in {SUPPORTED_K}")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")

    @property
    def exact(self) -> bool:
        return self.delta == 0

    def to_json(self) -> dict:
        return {"graph": self.graph.to_json(), "k": self.k, "delta": self.delta, "seed": self.seed,
                "readout_flip": self.readout_flip, "c_shot": self.c_shot,
                "report_unitaries": self.report_unitaries, "strict": self.strict, "oracle": self.oracle,
                "max_retries": self.max_retries, "retry_dither": self.retry_dither}

    @classmethod
    def from_json(cls, data: dict) -> "SessionConfig":
        d = dict(data)
        d["graph"] = CouplingGraph.from_json(d["graph"])
        return cls(**d)


@dataclass
class Cost:
    tomography_rounds: int = 0
    retry_rounds: int = 0
    total_settings: int = 0
    total_shots: int = 0
    total_gate_count: int = 0
    circuit_layers: int = 0
    shot_layers: int = 0
    depth_history: list[int] = field(default_factory=list)
    predicted_settings: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return dict(self.__dict__)


class MotteSession:
    """Holds the ledger and enforces tomography-before-gate.

    Every gate request must name the id of the latest report. Several gates may
    be deduced from one report (one circuit layer) as long as their scopes
    (gate qubits, probe and QITE domain) are disjoint.
    """

    def __init__(self, config: SessionConfig):
        self.config = config
        self.graph = config.graph
        self.ledger = CircuitLedger(self.graph.n_qubits, self.graph, strict=config.strict)
        self.cost = Cost()
        self.reports: list[TomographyReport] = []
        self.events: list[dict] = [{"event": "session", "schema": TRANSCRIPT_SCHEMA, "config": config.to_json()}]
        self.finalized = False
        self._used_scope: set[int] = set()
        self._oracle_cache: tuple[int, StateVector] | None = None

    @classmethod
    def create(cls, graph: CouplingGraph, **kwargs) -> "MotteSession":
        return cls(SessionConfig(graph, **kwargs))

    # -- queries -----------------------------------------------------------
    @property
    def n_qubits(self) -> int:
        return self.graph.n_qubits

    @property
    def latest_report(self) -> TomographyReport | None:
        return self.reports[-1] if self.reports else None

    def oracle_state(self) -> StateVector:
        if self._oracle_cache is not None and self._oracle_cache[0] == len(self.ledger):
            return self._oracle_cache[1]
        state = run_circuit(self.ledger, self.n_qubits)
        self._oracle_cache = (len(self.ledger), state)
        return state

    def cost_report(self) -> dict:
        out = self.cost.to_json()
        out["depth"] = self.ledger.depth
        out["gates"] = len(self.ledger)
        return out

    # -- protocol ----------------------------------------------------------
    def _check_open(self) -> None:
        if self.finalized:
            raise ProtocolError("session already finalized")

    def tomography(self, *, scope: Sequence[int] | None = None, dither: float = 0.0) -> TomographyReport:
        """A k-body tomography of the current circuit; returns a fresh report id."""
        self._check_open()
        cfg = self.config
        rid = len(self.reports)
        seed = int(derive_rng(cfg.seed, rid).integers(2**63))
        oracle = self.oracle_state() if (cfg.oracle or cfg.exact) else None
        report = estimate_report(self.ledger, self.graph, cfg.k, cfg.delta, seed, cfg.readout_flip,
                                 c_shot=cfg.c_shot, scope=scope, oracle_state=oracle, threads=cfg.threads)
        if dither > 0 and cfg.exact:
            rng = derive_rng(cfg.seed, rid, 1)
            noise = rng.normal(size=len(report.estimates))
            report.estimates = {lbl: float(np.clip(v + dither * z, -1.0, 1.0))
                                for (lbl, v), z in zip(report.estimates.items(), noise)}
            report.dither = dither
        report.report_id = rid
        self.reports.append(report)
        self._used_scope = set()
        depth = self.ledger.depth
        c = self.cost
        c.tomography_rounds += 1
        c.total_settings += report.settings_used
        c.total_shots += report.total_shots
        c.circuit_layers += report.settings_used * depth
        c.shot_layers += report.total_shots * depth
        c.depth_history.append(depth)
        predicted = len(schedule_settings(self.graph, cfg.k, scope)) if cfg.k in SUPPORTED_K else 0
        c.predicted_settings.append(predicted)
        self.events.append({"event": "tomography", "report_id": rid,
                            "scope": None if scope is None else list(scope),
                            "dither": dither, "settings": report.settings_used, "total_shots": report.total_shots})
        return report

    def _request_scope(self, req: GateRequest) -> tuple[int, ...]:
        if req.method == "qite":
            if not req.qite or "domain" not in req.qite:
                raise ValueError("qite requests need a payload with a domain")
            return tuple(int(q) for q in req.qite["domain"])
        return req.scope

    def _check_request(self, req: GateRequest) -> TomographyReport:
        self._check_open()
        report = self.latest_report
        if report is None:
            raise StaleReport("no tomography has been run yet")
        if req.report_id is None or req.report_id != report.report_id:
            raise StaleReport(f"request references report {req.report_id}, latest is {report.report_id}")
        n = self.n_qubits
        scope = self._request_scope(req)
        if any(not 0 <= q < n for q in scope + req.gate_qubits):
            raise LocalityError(f"qubits {scope} outside 0..{n - 1}")
        if req.method != "qite":
            if len(req.gate_qubits) == 2 and not self.graph.has_edge(*req.gate_qubits):
                raise LocalityError(f"qubits {req.gate_qubits} are not an edge")
            adjacent = any(self.graph.has_edge(req.probe, q) for q in req.gate_qubits)
            if req.method == "density-matrix" and not adjacent:
                raise LocalityError(f"probe {req.probe} is not adjacent to {req.gate_qubits}")
        else:
            if not self.graph.is_connected(scope):
                raise LocalityError(f"QITE domain {scope} is not connected")
            if len(scope) > 2 and self.config.strict:
                raise LocalityError("QITE domains wider than two qubits need a non-strict (oracle/driver) session")
        if len(scope) > report.k and not (req.method == "qite" and (req.qite or {}).get("mean_field")):
            raise LocalityError(f"scope {scope} exceeds the k={report.k} tomography")
        if report.scope is not None and not set(scope) <= set(report.scope):
            raise LocalityError(f"scope {scope} outside the tomography scope {report.scope}")
        if self._used_scope & set(scope):
            changed = sorted(self._used_scope & set(scope))
            raise StaleReport(f"qubits {changed} already changed since report {report.report_id}")
        return report

    def _deduce(self, req: GateRequest, report: TomographyReport) -> tuple[GateRecord, dict]:
        if req.method == "eigenstate":
            gate = deduce_eigenstate_gate(init_rdm(report, req), complete_target(report, req), req.f)
            record = GateRecord(req.gate_qubits, gate.unitary, "eigenstate", req.request_id, report.report_id)
            return record, gate.diagnostics
        if req.method == "density-matrix":
            gate = deduce_density_matrix_gate(init_rdm(report, req), complete_target(report, req))
            if len(req.gate_qubits) == 1:
                # the probe is passive: record U (x) I on the (gate, probe) edge
                record = GateRecord((req.gate_qubits[0], req.probe), np.kron(np.eye(2), gate.unitary),
                                    "density-matrix", req.request_id, report.report_id)
            else:
                record = GateRecord(req.gate_qubits, gate.unitary, "density-matrix", req.request_id,
                                    report.report_id)
            return record, gate.diagnostics
        qreq = QiteRequest.from_json({**req.qite, "n_steps": 1}, self.n_qubits)
        expectations = report.local(qreq.domain)
        sol = solve_qite_step(expectations, local_terms(qreq.terms, qreq.domain), qreq.domain, qreq.lam,
                              basis_k=qreq.basis_k, mean_field=qreq.mean_field)
        record = GateRecord(qreq.domain, sol.step_unitary(qreq.dtau), "qite", req.request_id, report.report_id)
        return record, {"residual": sol.residual, "variance": sol.variance, "filled": len(sol.filled)}

    def apply(self, req: GateRequest) -> dict:
        """Deduce and append the gate for ``req``; nothing changes if any check fails."""
        report = self._check_request(req)
        try:
            record, diag = self._deduce(req, report)
            self.ledger.check(record)
        except RetryTomography as exc:
            self.events.append({"event": "gate", "status": "retry", "request": req.to_json(), "reason": str(exc)})
            raise
        self.ledger.append(record)
        self._used_scope |= set(self._request_scope(req))
        self.cost.total_gate_count += 1
        self.events.append({"event": "gate", "status": "applied", "request": req.to_json(),
                            "qubits": list(record.qubits), "digest": self.ledger.digest()})
        summary = {"method": req.method, "qubits": record.qubits, "report_id": report.report_id,
                   "diagnostics": {k: v for k, v in diag.items() if not isinstance(v, np.ndarray)}}
        if self.config.report_unitaries:
            summary["unitary"] = record.unitary.copy()
        return summary

    def apply_template(self, init: SpectralRdm, target: SpectralRdm, edge: Sequence[int], report_id: int | None,
                       *, request_id: str | None = None) -> dict:
        """Append the eigenstate-method gate of a stored (init, target) RDM pair on ``edge``.

        The unitary depends only on the stored pair, so a template is replayed
        identically on every use; the call still has to reference the latest
        report like any other gate.
        """
        req = GateRequest("eigenstate", tuple(edge), report_id=report_id, request_id=request_id)
        report = self._check_request(req)
        gate = deduce_eigenstate_gate(init, target)
        record = GateRecord(req.gate_qubits, gate.unitary, "eigenstate", request_id, report.report_id)
        self.ledger.append(record)
        self._used_scope |= set(req.gate_qubits)
        self.cost.total_gate_count += 1
        self.events.append({"event": "template", "edge": list(req.gate_qubits), "report_id": report.report_id,
                            "init": _complex_json(init.raw),
                            "target": _complex_json(target.raw), "digest": self.ledger.digest()})
        summary = {"method": "combined-k2", "qubits": record.qubits, "report_id": report.report_id,
                   "diagnostics": {k: v for k, v in gate.diagnostics.items() if not isinstance(v, np.ndarray)}}
        if self.config.report_unitaries:
            summary["unitary"] = record.unitary.copy()
        return summary

    def apply_with_retry(self, build: Callable[[TomographyReport], GateRequest]) -> dict:
        """Apply ``build(report)``; on a degenerate report, re-run tomography and rebuild.

        In exact mode the repeated tomography carries a small seeded dither
        (``retry_dither``) so that the repeat can lift exact degeneracies.
        """
        report = self.latest_report if self.latest_report is not None else self.tomography()
        for attempt in range(self.config.max_retries + 1):
            req = build(report)
            req.report_id = report.report_id
            try:
                summary = self.apply(req)
                summary["retries"] = attempt
                return summary
            except RetryTomography:
                if attempt == self.config.max_retries:
                    break
                self.cost.retry_rounds += 1
                report = self.tomography(dither=self.config.retry_dither if self.config.exact else 0.0)
        raise DeductionFailed(f"deduction failed after {self.config.max_retries} retries")

    def apply_qite(self, qreq: QiteRequest, *, request_id: str | None = None) -> list[GateRecord]:
        """``n_steps`` QITE micro-steps, each preceded by a fresh tomography."""
        records = []
        payload = qreq.to_json()
        for step in range(qreq.n_steps):
            report = self.tomography()
            req = GateRequest("qite", qreq.domain, report_id=report.report_id,
                              request_id=None if request_id is None else f"{request_id}.{step}", qite=payload)
            self.apply(req)
            records.append(self.ledger.gates[-1])
        return records

    def finalize(self, shots: int) -> dict:
        """Z-basis measurement of the final state plus the cost report; closes the session."""
        self._check_open()
        seed = int(derive_rng(self.config.seed, 2**31 - 1).integers(2**63))
        hist = sample_z_basis(self.oracle_state(), shots, seed, self.config.readout_flip)
        self.finalized = True
        self.events.append({"event": "finalize", "shots": shots, "digest": self.ledger.digest()})
        return {"histogram": dict(sorted(hist.items())), "cost": self.cost_report()}

    # -- transcripts -------------------------------------------------------
    def save_transcript(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for ev in self.events:
                fh.write(json.dumps(ev, sort_keys=True) + "\n")

    @classmethod
    def replay(cls, path: str | Path) -> "MotteSession":
        """Re-run a transcript; raises if any recorded ledger digest is not reproduced."""
        lines = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        if not lines or lines[0].get("event") != "session" or lines[0].get("schema") != TRANSCRIPT_SCHEMA:
            raise ValueError("not a session transcript")
        session = cls(SessionConfig.from_json(lines[0]["config"]))
        for ev in lines[1:]:
            kind = ev.get("event")
            if kind == "tomography":
                session.tomography(scope=ev.get("scope"), dither=float(ev.get("dither", 0.0)))
            elif kind == "gate":
                req = GateRequest.from_json(ev["request"])
                if ev["status"] == "retry":
                    try:
                        session.apply(req)
                    except RetryTomography:
                        continue
                    raise ReplayMismatch("replay: a recorded retry did not recur")
                session.apply(req)
                if session.ledger.digest() != ev["digest"]:
                    raise ReplayMismatch("replay diverged from the recorded ledger")
            elif kind == "template":
                init = SpectralRdm.from_matrix(_complex_from_json(ev["init"]), ev["edge"])
                target = SpectralRdm.from_matrix(_complex_from_json(ev["target"]), ev["edge"])
                session.apply_template(init, target, ev["edge"], ev["report_id"])
                if session.ledger.digest() != ev["digest"]:
                    raise ReplayMismatch("replay diverged from the recorded ledger")
            elif kind == "finalize":
                if session.ledger.digest() != ev["digest"]:
                    raise ReplayMismatch("replay diverged from the recorded ledger")
                session.finalize(int(ev["shots"]))
            else:
                raise ValueError(f"unknown transcript event {kind!r}")
        return session


def _complex_json(m: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(m)]


def _complex_from_json(data: list) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in data])


def apply_qite(session: MotteSession, request: QiteRequest) -> list[GateRecord]:
    return session.apply_qite(request)


def layer_requests(session: MotteSession, builders: Sequence[Callable[[TomographyReport], GateRequest]]
                   ) -> list[dict]:
    """One tomography, then every request of a layer against it."""
    report = session.tomography()
    out = []
    for build in builders:
        req = build(report)
        req.report_id = report.report_id
        out.append(session.apply(req))
    return out


def summary_json(summary: dict) -> dict[str, Any]:
    out = dict(summary)
    out["qubits"] = list(out["qubits"])
    if "unitary" in out:
        out["unitary"] = _complex_json(out["unitary"])
    return out

import math
from itertools import product

import numpy as np
import pytest

from motte.backend import CircuitLedger, GateRecord, StateVector, exact_expectation, run_circuit
from motte.drivers import NAMED_GATES
from motte.graph import CouplingGraph
from motte.paulis import PauliString, local_labels
from motte.tomography import TomographyReport, estimate_report, schedule_settings, shots_for


def ghz_ledger(n=3):
    led = CircuitLedger(n, CouplingGraph.path(n))
    led.append(GateRecord((0,), NAMED_GATES["H"]))
    for q in range(n - 1):
        led.append(GateRecord((q, q + 1), NAMED_GATES["CNOT"]))
    return led


GRAPHS = [CouplingGraph.path(1), CouplingGraph.path(4), CouplingGraph.ring(5), CouplingGraph.complete(6),
          CouplingGraph.bipartite(6), CouplingGraph.complete(8)]


@pytest.mark.parametrize("g", GRAPHS, ids=lambda g: f"n{g.n_qubits}e{len(g.edges)}")
@pytest.mark.parametrize("k", [1, 2, 3])
def test_coverage(g, k):
    settings = schedule_settings(g, k)
    covered = set()
    for s in settings:
        for lbl in s.covers:
            assert s.compatible(lbl)
        covered |= set(s.covers)
    assert covered == set(local_labels(g, k))


def test_setting_counts():
    assert len(schedule_settings(CouplingGraph.path(4), 2)) == 9
    assert len(schedule_settings(CouplingGraph.bipartite(8), 2)) == 9
    assert [s.basis for s in schedule_settings(CouplingGraph.path(1), 1)] == ["X", "Y", "Z"]
    assert len(schedule_settings(CouplingGraph.complete(8), 2)) <= 9 * 3 + 3


def test_complete_graph_pairs_exhaustive():
    # every ordered letter pair on every edge of K8 is measured by some setting
    g = CouplingGraph.complete(8)
    bases = [s.basis for s in schedule_settings(g, 2)]
    n = g.n_qubits
    for u, v in g.edges:
        for a, b in product("XYZ", repeat=2):
            assert any(bs[n - 1 - u] == a and bs[n - 1 - v] == b for bs in bases), (u, v, a, b)


def test_unsupported_k():
    with pytest.raises(ValueError):
        schedule_settings(CouplingGraph.path(3), 4)


def test_settings_log_growth():
    ns = [4, 8, 16, 32, 64]
    counts = [len(schedule_settings(CouplingGraph.complete(n), 2)) for n in ns]
    a, b = np.polyfit(np.log2(ns), counts, 1)
    assert a <= 9
    assert all(c <= 6 * math.ceil(math.log2(n)) + 3 for n, c in zip(ns, counts))


def test_shots_formula():
    assert shots_for(0.1) == 100
    assert shots_for(0.05) == 4 * shots_for(0.1)
    assert shots_for(0.02, c_shot=2.0) == 5000


def test_exact_mode_is_oracle():
    g = CouplingGraph.path(3)
    led = ghz_ledger()
    rep = estimate_report(led, g, 3, 0.0, seed=0)
    state = run_circuit(led, 3)
    assert rep.exact and rep.total_shots == 0
    assert set(rep.estimates) == set(local_labels(g, 3))
    for lbl, v in rep.estimates.items():
        assert abs(v - exact_expectation(state, PauliString(lbl))) < 1e-12


def test_empty_ledger_sampled():
    g = CouplingGraph.path(2)
    rep = estimate_report(CircuitLedger(2, g), g, 2, 0.02, seed=1)
    assert rep["ZI"] == rep["IZ"] == rep["ZZ"] == 1.0
    assert abs(rep["XI"]) < 4 * 0.02 and abs(rep["IX"]) < 4 * 0.02
    assert rep.total_shots == rep.settings_used * rep.shots_per_setting


def test_ghz_sampled():
    g = CouplingGraph.path(3)
    rep = estimate_report(ghz_ledger(), g, 2, 0.02, seed=2)
    for lbl in ("IXX", "XXI"):
        assert abs(rep[lbl]) < 4 * 0.02
    for lbl in ("IZZ", "ZZI"):
        assert abs(rep[lbl] - 1) < 4 * 0.02
    assert all(-1 <= v <= 1 for v in rep.estimates.values())


def test_threads_match_sequential():
    g = CouplingGraph.path(4)
    led = ghz_ledger(4)
    a = estimate_report(led, g, 3, 0.1, seed=5)
    b = estimate_report(led, g, 3, 0.1, seed=5, threads=4)
    assert a.estimates == b.estimates


def test_seeded():
    g = CouplingGraph.path(3)
    a = estimate_report(ghz_ledger(), g, 2, 0.1, seed=5)
    b = estimate_report(ghz_ledger(), g, 2, 0.1, seed=5)
    c = estimate_report(ghz_ledger(), g, 2, 0.1, seed=6)
    assert a.estimates == b.estimates and a.estimates != c.estimates


def test_readout_flip_biases_z():
    g = CouplingGraph.path(1)
    rep = estimate_report(CircuitLedger(1, g), g, 1, 0.01, seed=3, readout_flip=0.1)
    assert abs(rep["Z"] - 0.8) < 0.03


def test_report_json_round_trip():
    g = CouplingGraph.path(3)
    rep = estimate_report(ghz_ledger(), g, 2, 0.1, seed=5)
    rep.report_id = 4
    data = rep.to_json()
    assert data["schema"] == "motte.report.v1"
    back = TomographyReport.from_json(data)
    assert back.report_id == 4 and back.settings_used == rep.settings_used
    for lbl, v in rep.estimates.items():
        assert back[lbl] == pytest.approx(v, rel=1e-5, abs=1e-6)


def test_local_view_and_signed_lookup():
    g = CouplingGraph.path(3)
    rep = estimate_report(ghz_ledger(), g, 2, 0.0, seed=0)
    local = rep.local((2, 1))
    assert local["ZZ"] == pytest.approx(1)
    assert local["II"] == 1.0
    assert rep[PauliString.parse("-IZZ")] == pytest.approx(-1)
    with pytest.raises(KeyError):
        rep[PauliString.parse("+iIZZ")]


def test_scoped_tomography():
    g = CouplingGraph.path(4)
    rep = estimate_report(ghz_ledger(4), g, 2, 0.1, seed=1, scope=(1, 2))
    assert all(PauliString(lbl).support and set(PauliString(lbl).support) <= {1, 2} for lbl in rep.estimates)
    with pytest.raises(ValueError):
        estimate_report(ghz_ledger(4), g, 2, 0.1, seed=1, scope=(0, 2))


def test_stderr_matches_spread():
    # predicted per-label standard errors against the spread over seeds (small version of the
    # acceptance statistics test)
    g = CouplingGraph.path(2)
    rng = np.random.default_rng(8)
    v = rng.normal(size=4) + 1j * rng.normal(size=4)
    state = StateVector(v / np.linalg.norm(v), 2)
    reps = [estimate_report([], g, 2, 0.1, seed=s, oracle_state=state) for s in range(60)]
    for lbl in reps[0].estimates:
        vals = np.array([r.estimates[lbl] for r in reps])
        pred = reps[0].stderr[lbl]
        assert 0.5 * pred < vals.std(ddof=1) < 2 * pred

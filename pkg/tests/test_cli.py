import csv
import io
import json
from pathlib import Path

import pytest

from motte.cli import EXIT_INPUT, EXIT_MISS, EXIT_OK, InputError, load_config, main, parse_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(argv):
    buf = io.StringIO()
    code = main([str(a) for a in argv], out=buf)
    return code, buf.getvalue()


def _summary(out_dir):
    return json.loads((Path(out_dir) / "summary.json").read_text())


# -- configs ----------------------------------------------------------------------------

@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.name)
def test_shipped_configs_parse(path):
    if path.name.endswith("_plan.json"):
        return
    cfg = load_config(path)
    cfg.session_config()
    assert cfg.driver is not None


def test_unknown_keys_rejected():
    base = {"schema": "motte.config.v1", "graph": {"family": "path", "n": 2}, "k": 2}
    parse_config(base)
    with pytest.raises(InputError):
        parse_config({**base, "colour": "red"})
    with pytest.raises(InputError):
        parse_config({**base, "graph": {"family": "path", "n": 2, "extra": 1}})
    with pytest.raises(InputError):
        parse_config({**base, "driver": {"name": "qite", "betta": 1}})
    with pytest.raises(InputError):
        parse_config({**base, "driver": {"name": "nope"}})
    with pytest.raises(InputError):
        parse_config({**base, "schema": "other"})
    with pytest.raises(InputError):
        parse_config({**base, "k": 0})
    cfg = parse_config({"graph": {"n_qubits": 3, "edges": [[0, 1], [1, 2]]}})
    assert cfg.graph.n_qubits == 3


def test_bad_config_exit_code(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"graph": {"family": "path", "n": 2}, "typo": 1, "driver": {"name": "qite"}}))
    assert run(["qite", p])[0] == EXIT_INPUT
    p.write_text("{not json")
    assert run(["emulate", p])[0] == EXIT_INPUT
    assert run(["adapt-prep", tmp_path / "missing.json"])[0] == EXIT_INPUT


def test_wrong_driver_exit_code():
    assert run(["adapt-prep", CONFIGS / "qite_1q.json"])[0] == EXIT_INPUT


def test_hamiltonian_error_names_line(tmp_path, capsys):
    ham = tmp_path / "h.ham"
    ham.write_text("-1 ZZ@0,1\n-1 Q@0\n")
    code, _ = run(["qite", CONFIGS / "qite_tfim4.json", "--hamiltonian", ham, "--out", tmp_path / "o"])
    assert code == EXIT_INPUT
    assert "line 2" in capsys.readouterr().err


# -- subcommands ---------------------------------------------------------------------------

@pytest.mark.parametrize("n", [2, 3, 4])
def test_ghz_exact(n, tmp_path):
    out = tmp_path / "ghz.json"
    code, text = run(["ghz", n, "--out", out])
    assert code == EXIT_OK
    data = json.loads(out.read_text())
    assert data["schema"] == "motte.ghz.v1" and data["passed"]
    assert data["fidelity"] >= 1 - 1e-8
    assert "gate 0" in text


def test_ghz_sampled():
    code, _ = run(["ghz", 3, "--delta", 0.05, "--seed", 1])
    assert code == EXIT_OK


def test_ghz_bad_n():
    assert run(["ghz", 1])[0] == EXIT_INPUT


def test_qite_single_qubit(tmp_path):
    out = tmp_path / "q"
    assert run(["qite", CONFIGS / "qite_1q.json", "--out", out])[0] == EXIT_OK
    s = _summary(out)
    assert s["schema"] == "motte.qite.v1"
    assert s["max_dev_from_first_order_map"] < 1e-6
    assert s["monotone_violations"] == []
    rows = list(csv.reader(open(out / "energy.csv")))
    assert rows[0] == ["round", "energy"] and len(rows) == 202
    assert (out / "tanh.csv").exists()


def test_qite_tfim4_k1_records_gap(tmp_path):
    out = tmp_path / "q"
    assert run(["qite", CONFIGS / "qite_tfim4_k1.json", "--out", out])[0] == EXIT_OK
    s = _summary(out)
    assert s["relative_gap"] > 0.01


def test_adapt_prep(tmp_path):
    out = tmp_path / "a"
    assert run(["adapt-prep", CONFIGS / "adapt_haar2.json", "--out", out])[0] == EXIT_OK
    s = _summary(out)
    assert s["schema"] == "motte.adapt.v1" and s["reached"]
    assert (out / "fidelity.csv").exists()


def test_adapt_prep_miss(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"graph": {"family": "path", "n": 3}, "k": 2,
                               "driver": {"name": "adapt-prep", "target": "ghz", "dtau": 0.1, "budget": 50}}))
    assert run(["adapt-prep", cfg, "--out", tmp_path / "a"])[0] == EXIT_MISS
    assert _summary(tmp_path / "a")["stalled"]


def test_emulate(tmp_path):
    out = tmp_path / "e.json"
    assert run(["emulate", CONFIGS / "emulate_ghz3.json", "--out", out])[0] == EXIT_OK
    data = json.loads(out.read_text())
    assert data["schema"] == "motte.emulation.v1"
    assert set(data["histogram"]) == {"000", "111"}


def test_emulate_bad_plan(tmp_path):
    plan = tmp_path / "p.json"
    plan.write_text(json.dumps([{"gate": "CNOT", "qubits": [0, 2]}]))
    assert run(["emulate", CONFIGS / "emulate_ghz3.json", "--plan", plan])[0] == EXIT_INPUT


def test_bench_small(tmp_path):
    out = tmp_path / "b.json"
    code, _ = run(["bench-overhead", "--depths", 2, 4, 8, "--delta", 0.2, "--complete", 4, 8, "--out", out])
    data = json.loads(out.read_text())
    assert data["schema"] == "motte.bench.v1"
    assert len(data["rows"]) == 3
    assert code in (EXIT_OK, EXIT_MISS)


def _strip_wall(data):
    if isinstance(data, dict):
        return {k: _strip_wall(v) for k, v in data.items() if k != "wall_s"}
    if isinstance(data, list):
        return [_strip_wall(v) for v in data]
    return data


def test_outputs_deterministic_and_thread_independent(tmp_path):
    a, b, c = tmp_path / "a.json", tmp_path / "b.json", tmp_path / "c.json"
    run(["emulate", CONFIGS / "emulate_ghz3.json", "--out", a])
    run(["emulate", CONFIGS / "emulate_ghz3.json", "--out", b])
    run(["--threads", 3, "emulate", CONFIGS / "emulate_ghz3.json", "--out", c])
    da, db, dc = (_strip_wall(json.loads(p.read_text())) for p in (a, b, c))
    assert da == db == dc
    assert run(["--threads", 0, "ghz", 3])[0] == EXIT_INPUT


# -- REPL and replay ---------------------------------------------------------------------

def test_repl_session(tmp_path, monkeypatch):
    transcript = tmp_path / "t.jsonl"
    req = json.dumps({"method": "eigenstate", "gate_qubits": [0], "targets": {"X@0": 1.0}})
    script = "\n".join(["help", "tomo", f"apply {req}", f"apply {req}", "bogus", "tomo 0,2",
                        "tomo", "cost", f"save {transcript}", "finalize 20", "tomo", "quit", "tomo"]) + "\n"
    monkeypatch.setattr("sys.stdin", io.StringIO(script))
    code, text = run(["repl", CONFIGS / "repl_p3.json"])
    assert code == EXIT_OK
    assert text.count("applied eigenstate") == 1
    assert "already changed" in text          # second apply against the same report
    assert "unknown command" in text
    assert "scope [0, 2] is not connected" in text
    assert "session already finalized" in text
    assert transcript.exists()

    out = io.StringIO()
    code = main(["replay", str(transcript)], out=out)
    assert code == EXIT_OK
    data = json.loads(out.getvalue())
    assert data["schema"] == "motte.replay.v1" and data["gates"] == 1


def test_replay_errors(tmp_path):
    p = tmp_path / "x.jsonl"
    p.write_text('{"event": "nothing"}\n')
    assert run(["replay", p])[0] == EXIT_INPUT
    assert run(["replay", tmp_path / "missing.jsonl"])[0] == EXIT_INPUT


def test_replay_mismatch_exit(tmp_path, monkeypatch):
    transcript = tmp_path / "t.jsonl"
    req = json.dumps({"method": "eigenstate", "gate_qubits": [0], "targets": {"X@0": 1.0}})
    monkeypatch.setattr("sys.stdin", io.StringIO(f"tomo\napply {req}\nsave {transcript}\n"))
    run(["repl", CONFIGS / "repl_p3.json"])
    lines = transcript.read_text().splitlines()
    ev = json.loads(lines[-1])
    ev["digest"] = "f" * len(ev["digest"])
    lines[-1] = json.dumps(ev)
    transcript.write_text("\n".join(lines) + "\n")
    assert run(["replay", transcript])[0] == EXIT_MISS

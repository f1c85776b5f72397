import json
import subprocess
import sys

import pytest

from conftest import SERVICE
from freqmc.cli import EXIT_BUDGET, EXIT_INPUT, EXIT_OK, InputError, RunConfig, main

SERVICE_PATH = str(SERVICE)
CHAIN = "state s\nstate u a\nstate v\ninit s\ntrans s - u:3/10 v:7/10\ntrans u - u:1\ntrans v - v:1\n"


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv, "--json")
    assert code == EXIT_OK, err
    return json.loads(out)


def strip_timing(rep):
    rep = dict(rep)
    rep.pop("timing", None)
    return rep


@pytest.fixture
def chain(tmp_path):
    p = tmp_path / "chain.mdl"
    p.write_text(CHAIN)
    return str(p)


def test_check_chain(capsys, chain):
    rep = run_json(capsys, "check", "--model", chain, "--formula", "G{1} a")
    assert rep["probability"]["fraction"] == "3/10"
    assert rep["certificates"]
    code, out, _ = run(capsys, "check", "--model", chain, "--formula", "F a")
    assert code == EXIT_OK and out.startswith("probability 3/10")


def test_check_state_option(capsys, chain):
    rep = run_json(capsys, "check", "--model", chain, "--formula", "F a", "--state", "u")
    assert rep["probability"]["fraction"] == "1/1"
    code, _, err = run(capsys, "check", "--model", chain, "--formula", "a", "--state", "zz")
    assert code == EXIT_INPUT and "zz" in err


def test_check_exit_codes(capsys, tmp_path, chain):
    bad = tmp_path / "bad.mdl"
    bad.write_text("state s\ninit s\ntrans s - s:0.5\n")
    assert run(capsys, "check", "--model", str(bad), "--formula", "a")[0] == EXIT_INPUT
    assert run(capsys, "check", "--model", str(tmp_path / "none.mdl"), "--formula", "a")[0] == EXIT_INPUT
    assert run(capsys, "check", "--model", chain, "--formula", "a &")[0] == EXIT_INPUT
    assert run(capsys, "check", "--model", SERVICE_PATH, "--formula", "a")[0] == EXIT_INPUT
    code, _, err = run(capsys, "check", "--model", chain, "--formula", "G F a", "--automaton-budget", "1")
    assert code == EXIT_BUDGET and "budget" in err


def test_synth_next_query(capsys, tmp_path):
    rep = run_json(capsys, "synth", "--model", SERVICE_PATH, "--formula", "X q & G F m & G{1}(q -> X r)")
    assert rep["probability"]["decimal"] == pytest.approx(0.5, abs=1e-9)
    rep = run_json(capsys, "synth", "--model", SERVICE_PATH, "--formula", "X q & G F m & G{1}(q -> X r)", "--exact")
    assert rep["probability"]["fraction"] == "1/2"
    ctx = [c for c in rep["contexts"] if c["committed"] == [1]][0]
    assert any(u["state"] == "s1" for u in ctx["upsilon"])


def test_synth_values(capsys):
    rep = run_json(capsys, "synth", "--model", SERVICE_PATH, "--formula", "G F m & G{1}(q -> X r)")
    assert rep["probability"]["decimal"] == pytest.approx(1, abs=1e-9)
    rep = run_json(capsys, "synth", "--model", SERVICE_PATH, "--formula", "q & !q")
    assert rep["probability"]["decimal"] == 0
    code, _, err = run(capsys, "synth", "--model", SERVICE_PATH, "--formula", "G{1} q")
    assert code == EXIT_INPUT and "true &" in err
    code, _, _ = run(capsys, "synth", "--model", SERVICE_PATH, "--formula", "G F m & G{1}(q -> X r)", "--product-budget", "2")
    assert code == EXIT_BUDGET


def test_formula_from_file(capsys, tmp_path):
    f = tmp_path / "psi.ltl"
    f.write_text("G F m &\n G{1}(q -> X r)\n")
    rep = run_json(capsys, "synth", "--model", SERVICE_PATH, "--formula", f"@{f}")
    assert rep["probability"]["decimal"] == pytest.approx(1)
    assert run(capsys, "synth", "--model", SERVICE_PATH, "--formula", f"@{tmp_path / 'nope'}")[0] == EXIT_INPUT


def test_synth_then_sim(capsys, tmp_path):
    strat = str(tmp_path / "strat.bin")
    trace = tmp_path / "trace.txt"
    rep = run_json(capsys, "synth", "--model", SERVICE_PATH, "--formula", "G F m & G{1}(q -> X r)", "--out", strat)
    assert rep["strategy_file"] == strat
    args = ["sim", "--model", SERVICE_PATH, "--strategy", strat, "--horizon", "3000", "--seed", "4",
            "--formula", "q -> X r", "--trace", str(trace)]
    a = run_json(capsys, *args)
    b = run_json(capsys, *args)
    assert a == b
    assert a["frequency"]["estimate"] >= 0.95
    lines = trace.read_text().splitlines()
    assert len(lines) == 3000 and len(lines[0].split()) == 4
    code, out, _ = run(capsys, *args)
    assert code == EXIT_OK and "frequency" in out


def test_sim_errors(capsys, tmp_path, chain):
    missing = str(tmp_path / "missing.bin")
    assert run(capsys, "sim", "--model", SERVICE_PATH, "--strategy", missing)[0] == EXIT_INPUT
    strat = str(tmp_path / "s.bin")
    run(capsys, "synth", "--model", SERVICE_PATH, "--formula", "G F m", "--out", strat)
    assert run(capsys, "sim", "--model", chain, "--strategy", strat)[0] == EXIT_INPUT
    assert run(capsys, "sim", "--model", SERVICE_PATH, "--strategy", strat, "--horizon", "0")[0] == EXIT_INPUT
    assert run(capsys, "sim", "--model", SERVICE_PATH, "--strategy", strat, "--formula", "G{1} q")[0] == EXIT_INPUT


def test_json_deterministic_modulo_timing(capsys):
    args = ["synth", "--model", SERVICE_PATH, "--formula", "X q & G F m & G{1}(q -> X r)"]
    a, b = run_json(capsys, *args), run_json(capsys, *args)
    assert strip_timing(a) == strip_timing(b)


def test_aut(capsys, tmp_path):
    rep = run_json(capsys, "aut", "--formula", "true")
    assert rep["states"] == 1
    dot = tmp_path / "a.dot"
    rep = run_json(capsys, "aut", "--formula", "q -> X r", "--dot", str(dot))
    assert rep["atoms"] == ["q", "r"] and rep["pairs"]
    assert dot.read_text().startswith("digraph")
    assert run(capsys, "aut", "--formula", "q ->")[0] == EXIT_INPUT
    assert run(capsys, "aut", "--formula", "G{1} q")[0] == EXIT_INPUT


def test_run_config_validation():
    with pytest.raises(InputError):
        RunConfig("check", tol=0)
    with pytest.raises(InputError):
        RunConfig("check", automaton_budget=0)


def test_console_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "freqmc.cli", "aut", "--formula", "a U b", "--json"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["states"] >= 2

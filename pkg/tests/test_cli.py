import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from innovgrad.cli import run
from innovgrad.model import SystemModel
from innovgrad.systems import example_loss, random_system

import oracles


def _run(*argv):
    out = io.StringIO()
    code = run(list(argv), stdout=out)
    return code, out.getvalue()


@pytest.fixture
def sysfile(tmp_path):
    s = random_system(np.random.default_rng(4), 2, 1)
    path = tmp_path / "sys.json"
    path.write_text(s.to_json())
    return str(path)


@pytest.fixture
def gainfile(tmp_path):
    path = tmp_path / "gain.json"
    path.write_text(json.dumps({"L": [[0.1], [0.05]]}))
    return str(path)


def test_spurious_demo_table():
    code, out = _run("spurious-demo")
    assert code == 0
    assert "NOT observable" in out and "rank 1/2" in out
    assert "descend from (7, 0): converged, final L = [7.0, 0.0]" in out


def test_spurious_demo_csv_has_key_values():
    code, out = _run("spurious-demo", "--format", "csv")
    rows = list(csv.DictReader(io.StringIO(out)))
    by_l2 = {float(r["l2"]): float(r["J"]) for r in rows}
    assert by_l2[0.0] == 3.0 and by_l2[0.5] == 4.0


def test_analyze_json(sysfile, gainfile):
    code, out = _run("analyze", "--system", sysfile, "--gain", gainfile, "--format", "json")
    d = json.loads(out)
    assert code == 0 and d["rho_F"] < 1 and "assumptions" in d


def test_gain_bare_list(tmp_path):
    g = tmp_path / "g.json"
    g.write_text("[0.0, 0.5]")
    code, out = _run("analyze", "--system", "paper-example", "--gain", str(g), "--format", "json")
    assert json.loads(out)["J_innov"] == pytest.approx(4.0, abs=1e-12)


def test_kalman(sysfile):
    code, out = _run("kalman", "--system", sysfile, "--format", "json")
    d = json.loads(out)
    assert d["K_norm"] <= 1e-8 and d["riccati_residual"] <= 1e-10


def test_descend_csv_and_gains(sysfile, tmp_path):
    out = tmp_path / "traj.csv"
    code, _ = _run("descend", "--system", sysfile, "--format", "csv", "--out", str(out))
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    assert float(rows[-1]["grad_norm"]) <= 1e-10
    gains = json.loads((tmp_path / "traj.csv.gains.json").read_text())
    assert len(gains["samples"]) == len(rows)


def test_rate_reports_certificate(sysfile):
    code, out = _run("rate", "--system", sysfile, "--format", "json")
    d = json.loads(out)
    assert code == 0 and d["bound_satisfied"] is True and d["mode"] == "flow_rk4"
    assert "kappa_levelset_upper_estimate" in d


def test_verify_grad(sysfile, gainfile):
    code, out = _run("verify-grad", "--system", sysfile, "--gain", gainfile, "--format", "json")
    assert json.loads(out)["max_relative_mismatch"] <= 1e-5


def test_montecarlo_json_replayable(sysfile, gainfile):
    args = ("montecarlo", "--system", sysfile, "--gain", gainfile, "--horizon", "20000",
            "--seed", "9", "--format", "json")
    a, b = _run(*args)[1], _run(*args)[1]
    d = json.loads(a)
    assert a == b and d["seed"] == 9 and d["horizon"] == 20000


def test_coercivity_boundary_example():
    code, out = _run("coercivity", "--system", "paper-example", "--format", "json")
    pts = json.loads(out)["points"]
    at = [p for p in pts if p["alpha"] == 0.999][0]
    assert at["J"] > 1000


@pytest.mark.parametrize("argv", [
    ("bogus",),
    ("analyze",),
    ("analyze", "--system", "missing.json"),
    ("analyze", "--system", "paper-example", "--tol", "-1"),
])
def test_usage_errors_exit_2(argv):
    assert _run(*argv)[0] == 2


def test_unstable_gain_exit_2(tmp_path):
    g = tmp_path / "g.json"
    g.write_text('{"L": [[0], [3]]}')
    assert _run("descend", "--system", "paper-example", "--gain", str(g))[0] == 2


def test_malformed_system_exit_2(tmp_path, capsys):
    p = tmp_path / "s.json"
    p.write_text('{"A": [[0.5]], "C": [[1]]')
    assert _run("analyze", "--system", str(p))[0] == 2
    assert "line 1" in capsys.readouterr().err


def test_numerical_failure_exit_3(tmp_path, capsys):
    # the unstable mode is invisible in the output, so the Riccati iteration diverges
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"A": [[2.0, 0.0], [0.0, 0.5]], "C": [[0.0, 1.0]],
                             "Q_w": [[1.0, 0.0], [0.0, 1.0]], "R_v": [[1.0]]}))
    assert _run("kalman", "--system", str(p))[0] == 3
    assert "numerical failure" in capsys.readouterr().err


def test_console_script_entry_point():
    r = subprocess.run([sys.executable, "-m", "innovgrad.cli", "spurious-demo", "--format", "json"],
                       capture_output=True, text=True, check=True)
    assert json.loads(r.stdout)["stationary_final"] == [7.0, 0.0]


DATA = __import__("pathlib").Path(__file__).resolve().parent.parent / "data"


def test_kalman_on_shipped_scalar_system():
    code, out = _run("kalman", "--system", str(DATA / "scalar.json"), "--format", "json")
    d = json.loads(out)
    _, L_ref = oracles.dare_scalar(0.9, 1.0, 1.0, 1.0)
    assert d["L_KF"][0][0] == pytest.approx(L_ref, rel=1e-12)
    assert d["riccati_residual"] <= 1e-10


@pytest.mark.parametrize("system,gain", [("scalar.json", "scalar_gain.json"),
                                         ("random3x2.json", "random3x2_gain.json")])
def test_verify_grad_on_shipped_examples(system, gain):
    code, out = _run("verify-grad", "--system", str(DATA / system), "--gain", str(DATA / gain),
                     "--format", "json")
    assert code == 0 and json.loads(out)["max_relative_mismatch"] <= 1e-5


def test_system_written_by_cli_round_trips(sysfile):
    code, out = _run("analyze", "--system", sysfile, "--format", "json")
    back = SystemModel.from_dict(json.loads(out)["system"])
    assert back == SystemModel.from_json(open(sysfile).read())


def test_csv_numbers_carry_17_digits():
    code, out = _run("spurious-demo", "--format", "csv")
    row = list(csv.DictReader(io.StringIO(out)))[0]
    assert float(row["J"]) == example_loss(-0.9)

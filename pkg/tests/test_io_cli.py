import json
import os

import numpy as np
import pytest

from nhb.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from nhb.config import load_config
from nhb.dynamics import IntegratorConfig, simulate
from nhb.errors import ConfigError, ContractError
from nhb.io import (file_sha256, read_trajectory, read_trajectory_csv, read_trajectory_npz, write_trajectory_csv,
                    write_trajectory_npz)
from nhb.model import State

DW = {"kind": "double_well", "c1": 0.25, "c2": 0.5}


def _write_cfg(tmp_path, name="cfg.json", **sections):
    cfg = {"schema_version": 1, **sections}
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def _traj(harmonic, params, chains=None, n_steps=40):
    x0 = State([0.3], [-0.1], 0.2)
    if chains:
        x0 = State.repeat(x0, chains)
    return simulate(x0, IntegratorConfig(dt=0.01, n_steps=n_steps, seed=2), harmonic, params)


# ---------------------------------------------------------------------------
# io

def test_csv_round_trip(tmp_path, harmonic, params):
    tr = _traj(harmonic, params)
    p = tmp_path / "t.csv"
    write_trajectory_csv(p, tr)
    lines = p.read_text().splitlines()
    assert lines[0] == "# format: nhb-trajectory/1" and lines[1] == "t,q0,p0,xi"
    back = read_trajectory_csv(p)
    assert np.array_equal(back.times, tr.times) and np.array_equal(back.q, tr.q)
    assert np.array_equal(back.p, tr.p) and np.array_equal(back.xi, tr.xi)
    with pytest.raises(ContractError):
        write_trajectory_csv(tmp_path / "b.csv", _traj(harmonic, params, chains=2))


def test_npz_round_trip_and_bytes(tmp_path, harmonic, params):
    tr = _traj(harmonic, params, chains=3)
    a, b = tmp_path / "a.npz", tmp_path / "b.npz"
    write_trajectory_npz(a, tr)
    write_trajectory_npz(b, _traj(harmonic, params, chains=3))
    assert file_sha256(a) == file_sha256(b)
    back = read_trajectory_npz(a)
    for k in ("times", "q", "p", "xi", "kinetic_integral", "arc_length", "active_time", "chain_ids"):
        assert np.array_equal(getattr(back, k), getattr(tr, k))
    assert back.scheme == tr.scheme and back.dt == tr.dt
    assert read_trajectory(str(a)).q.shape == tr.q.shape
    with pytest.raises(ContractError):
        read_trajectory(str(tmp_path / "x.txt"))


def test_empty_csv_rejected(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("# format: nhb-trajectory/1\nt,q0,p0,xi\n")
    with pytest.raises(ContractError):
        read_trajectory_csv(p)
    p.write_text("t,q0,p0,xi\n0,0,0,0\n")
    with pytest.raises(ContractError):
        read_trajectory_csv(p)


# ---------------------------------------------------------------------------
# config

def test_config_defaults_and_hash():
    a = load_config({"schema_version": 1})
    b = load_config('{"schema_version": 1}')
    assert a.hash == b.hash and a.params.N == 1 and a.pot.name
    assert load_config({"schema_version": 1, "seed": 5}).hash != a.hash
    assert load_config({"schema_version": 1}, {"seed": 9}).seed == 9


@pytest.mark.parametrize("bad,needle", [
    ({}, "schema_version"),
    ({"schema_version": 2}, "schema_version"),
    ({"schema_version": 1, "sed": 1}, "unknown"),
    ({"schema_version": 1, "integrator": {"dtt": 0.1}}, "unknown"),
    ({"schema_version": 1, "integrator": {"dt": 0.0}}, "dt"),
    ({"schema_version": 1, "system": {"gamma": -1.0}}, "system"),
    ({"schema_version": 1, "potential": {"kind": "cubic"}}, "potential"),
    ({"schema_version": 1, "potential": {"kind": "harmonic", "N": 2}}, "N=2"),
    ({"schema_version": 1, "chains": 0}, "chains"),
    ({"schema_version": 1, "lyapunov": {"beta0": 0.5}}, "0.427"),
    ({"schema_version": 1, "lyapunov": {"eps0": 0.5}}, "lyapunov"),
    ({"schema_version": 1, "diagnostics": {"burn_in_fraction": 1.0}}, "burn_in"),
])
def test_config_errors_name_the_constraint(bad, needle):
    with pytest.raises(ConfigError, match=needle):
        load_config(bad)


def test_beta0_auto_resolves():
    cfg = load_config({"schema_version": 1, "lyapunov": {"beta0": "auto", "eps0": "auto"}})
    alpha, b0, e0 = cfg.lyapunov_inputs()
    assert abs(b0 - 0.5 * 0.427016328299098) < 1e-12 and abs(e0 - 0.3 * b0) < 1e-15


# ---------------------------------------------------------------------------
# cli

def test_simulate_outputs_and_determinism(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, integrator={"dt": 0.01, "n_steps": 200}, seed=3)
    for d in ("r1", "r2"):
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / d), "--quiet"]) == EXIT_OK
    csv = (tmp_path / "r1" / "trajectory.csv").read_text().splitlines()
    assert csv[1] == "t,q0,p0,xi" and len(csv) == 2 + 201
    for f in ("trajectory.csv", "trajectory.npz", "summary.json"):
        assert file_sha256(tmp_path / "r1" / f) == file_sha256(tmp_path / "r2" / f)
    man = json.loads((tmp_path / "r1" / "manifest.json").read_text())
    assert man["seed"] == 3 and man["outputs"]["trajectory.csv"] == file_sha256(tmp_path / "r1" / "trajectory.csv")
    assert len(man["config_sha256"]) == 64 and "numpy" in man["versions"]
    summ = json.loads((tmp_path / "r1" / "summary.json").read_text())
    assert summ["support_bound_violations"] == 0 and summ["xi_identity_max_rel_error"] < 1e-9
    # a different seed changes the path
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "r3"), "--seed", "4", "--quiet"]) == EXIT_OK
    assert file_sha256(tmp_path / "r3" / "trajectory.csv") != file_sha256(tmp_path / "r1" / "trajectory.csv")


def test_simulate_many_chains(tmp_path):
    cfg = _write_cfg(tmp_path, integrator={"dt": 0.01, "n_steps": 50}, potential=DW)
    out = tmp_path / "o"
    assert main(["simulate", "--config", cfg, "--out", str(out), "--chains", "4", "--quiet"]) == EXIT_OK
    assert sorted(os.listdir(out)) == sorted(["manifest.json", "summary.json", "trajectory.npz"]
                                             + [f"trajectory_chain{i}.csv" for i in range(4)])
    assert read_trajectory(str(out / "trajectory.npz")).q.shape == (51, 4, 1)


def test_config_errors_exit_2(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, lyapunov={"beta0": 0.5})
    assert main(["drift-check", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "beta* = 0.427016" in err
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema_version": 1, "integrator": {"dt": 0.01, "stepz": 3}}')
    assert main(["simulate", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_diagnose_cli(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, integrator={"dt": 0.02, "n_steps": 300}, potential=DW, output_dir=str(tmp_path / "o"))
    assert main(["simulate", "--config", cfg, "--chains", "40", "--quiet"]) == EXIT_OK
    npz = str(tmp_path / "o" / "trajectory.npz")
    assert main(["diagnose", "--config", cfg, "--input", npz, "--out", str(tmp_path / "d"), "--quiet"]) == EXIT_OK
    rep = json.loads((tmp_path / "d" / "diagnostics.json").read_text())
    assert set(rep["ks"]) == {"q0", "p0", "xi"}
    assert all(np.isfinite(v) for v in (rep["temperature"], rep["xi_mean"], rep["xi_var"]))
    hist = np.loadtxt(tmp_path / "d" / "q0_histogram.csv", delimiter=",", skiprows=1)
    assert hist.shape == (60, 3)
    # several single-chain CSVs are stacked into an ensemble
    csvs = [str(tmp_path / "o" / f"trajectory_chain{i}.csv") for i in range(3)]
    args = ["diagnose", "--config", cfg, "--out", str(tmp_path / "d2"), "--quiet"]
    assert main(args + sum((["--input", c] for c in csvs), [])) == EXIT_OK
    # two ensembles (at least 1000 chains each) give a TV table
    cfg_a = _write_cfg(tmp_path, "a.json", integrator={"dt": 0.02, "n_steps": 100}, potential=DW,
                       output_dir=str(tmp_path / "oa"))
    cfg_b = _write_cfg(tmp_path, "b.json", integrator={"dt": 0.02, "n_steps": 100}, potential=DW, seed=8,
                       initial_state={"q": [-1.5], "p": [0.0], "xi": 0.0}, output_dir=str(tmp_path / "ob"))
    for c in (cfg_a, cfg_b):
        assert main(["simulate", "--config", c, "--chains", "1000", "--quiet"]) == EXIT_OK
    assert main(["diagnose", "--config", cfg, "--input", str(tmp_path / "oa" / "trajectory.npz"),
                 "--input-b", str(tmp_path / "ob" / "trajectory.npz"), "--out", str(tmp_path / "d3"),
                 "--quiet"]) == EXIT_OK
    assert json.loads((tmp_path / "d3" / "diagnostics.json").read_text())["tv"] is not None
    assert (tmp_path / "d3" / "tv_decay.csv").exists()


def test_diagnose_empty_input_is_an_error(tmp_path, capsys):
    assert main(["diagnose", "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    empty = tmp_path / "e.csv"
    empty.write_text("# format: nhb-trajectory/1\nt,q0,p0,xi\n")
    assert main(["diagnose", "--input", str(empty), "--out", str(tmp_path / "o")]) == EXIT_RUNTIME
    assert "empty" in capsys.readouterr().err


def test_drift_check_cli(tmp_path):
    cfg = _write_cfg(tmp_path, potential=DW, lyapunov={"seeds": [512, 16384, 128], "n_samples": 3000,
                                                       "n_explore": 3000, "max_rounds": 1})
    assert main(["drift-check", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_OK
    cert = json.loads((tmp_path / "o" / "certificate.json").read_text())
    assert cert["passed"] and cert["n_violations"] == 0 and cert["n_sandwich_violations"] == 0
    # seed scales without escalation do not certify
    cfg = _write_cfg(tmp_path, "s.json", potential=DW, lyapunov={"n_samples": 3000, "n_explore": 3000,
                                                                  "max_rounds": 1})
    assert main(["drift-check", "--config", cfg, "--out", str(tmp_path / "o2"), "--quiet"]) == EXIT_RUNTIME


def test_control_demo_cli(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, control={"t": 1.0, "origin": {"q": [0.2], "p": [0.5], "xi": 0.1}})
    assert main(["control-demo", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    rep = json.loads((tmp_path / "o" / "control_report.json").read_text())
    status = [r["status"] for r in rep["targets"]]
    assert status == ["verified", "verified", "verified", "infeasible"]
    assert [r["mode"] for r in rep["targets"][:3]] == ["boundary", "delta", "dwell"]
    assert all(r["verification"]["max_error"] < 1e-6 for r in rep["targets"][:3])
    path = np.loadtxt(tmp_path / "o" / "control_path_2.csv", delimiter=",", skiprows=1)
    assert path.shape[1] == 5 and np.isclose(path[-1, 1], 0.7)
    bad = _write_cfg(tmp_path, "b.json", control={"targets": [{"q": [0.1], "xi": "lowest"}]})
    assert main(["control-demo", "--config", bad, "--out", str(tmp_path / "o2")]) == EXIT_CONFIG


def test_specfun_cli(capsys):
    assert main(["specfun", "--z", "1", "100"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "0.53807950691276" in out and "z* = 0.92413887300459" in out
    assert "beta* (kB T = 1) = 0.42701632829909" in out
    assert main(["specfun", "--kT", "2"]) == EXIT_OK
    assert "beta* (kB T = 2) = 0.21350816414954" in capsys.readouterr().out

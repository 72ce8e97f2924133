import json
import subprocess
import sys

import numpy as np
import pytest

from escna.cli import main
from escna.esc import averaged_system_theorem1, equilibrium_boundary_uu, synthesize_controller
from escna.integrate import Trajectory, compare, integrate_average, integrate_closed_loop
from escna.model import builtin

EX1 = ["--m", "1", "--omega", "200", "--alpha", "0.32", "--k", "50", "--V", "x1^2", "--x0", "1.5", "--T", "10"]


def manifest(path):
    return json.loads(path.read_text())


def test_simulate_average_compare_pipeline(tmp_path):
    traj = tmp_path / "traj.csv"
    avg = tmp_path / "avg.csv"
    rep = tmp_path / "report.json"
    assert main(["simulate", "--builtin", "example1", *EX1, "--steps-per-period", "50", "--out", str(traj)]) == 0
    assert traj.read_text().splitlines()[0] == "t,x1,u"
    assert main(["average", "--builtin", "example1_approx", *EX1, "--out", str(avg)]) == 0
    assert avg.read_text().splitlines()[0] == "t,x1"
    assert main(["compare", str(traj), str(avg), "--out", str(rep)]) == 0
    report = json.loads(rep.read_text())
    assert report["sup_error"] > 0 and report["resampled"]

    m = manifest(tmp_path / "report.json.manifest.json")
    assert m["command"] == "compare" and m["exit_code"] == 0 and m["error"] is None
    assert set(m["inputs"]) == {str(traj), str(avg)}
    assert all(len(h) == 64 for h in m["inputs"].values())
    assert m["outputs"] == [str(rep)]


def test_simulate_is_a_thin_binding(tmp_path):
    out = tmp_path / "traj.csv"
    assert main(["simulate", "--builtin", "example1", *EX1, "--out", str(out)]) == 0
    c = synthesize_controller(1, 0.32, 200, 50, "x1^2")
    direct = integrate_closed_loop(builtin("example1"), c, [1.5], T=10, steps_per_period=50)
    via_cli = Trajectory.from_csv(out)
    assert np.array_equal(via_cli.states, direct.states)
    assert np.array_equal(via_cli.times, direct.times)


def test_average_is_a_thin_binding(tmp_path):
    out = tmp_path / "avg.csv"
    assert main(["average", "--builtin", "example1_approx", *EX1, "--out", str(out)]) == 0
    c = synthesize_controller(1, 0.32, 200, 50, "x1^2")
    direct = integrate_average(averaged_system_theorem1(builtin("example1_approx"), c), [1.5], T=10)
    assert np.array_equal(Trajectory.from_csv(out).states, direct.states)


def test_numeric_flags_are_echoed(tmp_path):
    out = tmp_path / "traj.csv"
    main(["simulate", "--builtin", "example1", *EX1, "--out", str(out)])
    p = manifest(tmp_path / "traj.csv.manifest.json")["params"]
    assert (p["m"], p["omega"], p["alpha"], p["k"], p["T"], p["x0"]) == (1, 200.0, 0.32, 50.0, 10.0, [1.5])


def test_unknown_builtin_is_a_usage_error(tmp_path, capsys):
    mf = tmp_path / "m.json"
    code = main(["simulate", "--builtin", "nosuch", *EX1, "--manifest", str(mf)])
    assert code == 2
    m = manifest(mf)
    assert m["exit_code"] == 2 and "unknown builtin" in m["error"]
    assert "unknown builtin" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        ["simulate", "--builtin", "example1", "--bogus", "1"],
        ["simulate", "--builtin", "example1", "--m", "1"],  # missing flags
        ["simulate", "--builtin", "example1", *EX1[:-2]],  # missing --T
        ["simulate", "--config", "/nonexistent.json", *EX1],
        ["simulate", "--builtin", "example1", *EX1, "--x0", "1,2"],
        ["simulate", "--builtin", "example1", "--m", "1", "--omega", "-5", "--alpha", "1", "--k", "1", "--V", "x1", "--x0", "1", "--T", "1"],
        ["fit", "--m", "1", "--U", "2", "--h", "k*u"],
        ["sweep", "--builtin", "uu", "--axis", "alpha:1:2", "--m", "2", "--k", "100"],
        ["verify-limits", "--m", "1", "--omegas", "100,200,400", "--nodes-per-period", "10"],
        ["boundary", "--system", "uu", "--m", "5", "--k", "100", "--omega", "100"],
        [],
    ],
)
def test_usage_errors_exit_2(tmp_path, argv):
    mf = tmp_path / "m.json"
    assert main([*argv, "--manifest", str(mf)] if argv else ["--manifest", str(mf)]) == 2
    assert manifest(mf)["exit_code"] == 2


def test_runtime_errors_exit_1(tmp_path):
    mf = tmp_path / "m.json"
    bad_out = tmp_path / "missing_dir" / "traj.csv"
    assert main(["simulate", "--builtin", "example1", *EX1, "--out", str(bad_out), "--manifest", str(mf)]) == 1
    m = manifest(mf)
    assert m["exit_code"] == 1 and m["error"]
    # a boundary search with no root is a computation failure
    assert main(["boundary", "--system", "uu", "--m", "2", "--k", "1e-9", "--omega", "100", "--manifest", str(mf)]) == 1


def test_controller_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "ctl.json"
    cfg.write_text(json.dumps({"m": 1, "alpha": 0.32, "omega": 200, "k": 50, "V": "x1^2"}))
    out = tmp_path / "a.csv"
    argv = ["simulate", "--builtin", "example1", "--controller", str(cfg), "--k", "10", "--x0", "1.5", "--T", "1"]
    assert main([*argv, "--out", str(out)]) == 0
    assert "--k overrides 'k'" in capsys.readouterr().err
    m = manifest(tmp_path / "a.csv.manifest.json")
    assert m["params"]["k"] == 10.0 and str(cfg) in m["inputs"]
    cfg.write_text(json.dumps({"m": 1, "colour": 3}))
    assert main([*argv, "--out", str(out)]) == 2


def test_manifest_is_stable_modulo_wall_time(tmp_path):
    traj = tmp_path / "t.csv"
    runs = []
    for _ in range(2):
        main(["simulate", "--builtin", "example1", *EX1, "--T", "1", "--out", str(traj)])
        m = manifest(tmp_path / "t.csv.manifest.json")
        m.pop("wall_time")
        runs.append(m)
    assert runs[0] == runs[1]


def test_fit_command(tmp_path):
    out = tmp_path / "fit.json"
    assert main(["fit", "--builtin", "example1", "--m", "1", "--U", "2", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["powers"] == [1, 3]
    assert rep["coefficients"][1] == pytest.approx(0.29996, abs=1e-4)
    assert main(["fit", "--h", "u^3", "--m", "1", "--U", "2", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["sup_error"] <= 1e-12


def test_boundary_command(tmp_path):
    out = tmp_path / "b.csv"
    code = main(["boundary", "--system", "uu", "--m", "2", "--k", "100", "--eps", "0.05", "--omega", "50,100", "--x-star", "0.5", "--out", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "omega,alpha_boundary"
    assert float(lines[2].split(",")[1]) == equilibrium_boundary_uu(100, 2, 0.05, 100, 0.5)
    code = main(["boundary", "--system", "evenpow", "--m", "1", "--k", "100", "--alpha", "10", "--omega", "100", "--out", str(out)])
    assert code == 0
    assert float(out.read_text().splitlines()[1].split(",")[1]) == pytest.approx(199 / 37.5)


def test_sweep_command_and_job_count_independence(tmp_path):
    base = ["sweep", "--builtin", "uu", "--axis", "omega:20:60:3", "--axis", "alpha:0.5:3:3",
            "--m", "2", "--k", "100", "--eps", "0.05", "--T", "1"]
    one, two = tmp_path / "g1.csv", tmp_path / "g2.csv"
    summ = tmp_path / "s.json"
    bnd = tmp_path / "b.csv"
    assert main([*base, "--out", str(one), "--summary-out", str(summ), "--boundary-out", str(bnd)]) == 0
    assert main([*base, "--jobs", "2", "--out", str(two)]) == 0
    assert one.read_bytes() == two.read_bytes()
    assert one.read_text().splitlines()[0] == "omega,alpha,terminal_abs_x,label"
    assert bnd.read_text().splitlines()[0] == "omega,alpha_boundary"
    assert sum(json.loads(summ.read_text())["counts"].values()) == 9


def test_sweep_spec_file_and_config(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"system": "uu", "axes": [{"name": "alpha", "min": 1, "max": 2, "count": 2}], "m": 2, "k": 100, "T": 0.5}))
    out = tmp_path / "g.csv"
    assert main(["sweep", "--spec", str(spec), "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 3
    sysfile = tmp_path / "decay.json"
    sysfile.write_text(json.dumps({"dim": 1, "drift": ["-x1"], "odd_channels": [{"power_index": 0, "exprs": ["0"]}]}))
    assert main(["sweep", "--config", str(sysfile), "--axis", "alpha:1:2:2", "--m", "0", "--k", "1", "--out", str(out)]) == 0
    assert out.read_text().count("convergent") == 2


def test_verify_limits_command(tmp_path):
    out = tmp_path / "v.json"
    assert main(["verify-limits", "--m", "0", "--omegas", "100,400,1600", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["passed"] and rep["uniform"]["kind"] == "uniform" and rep["weak"][0]["l"] == 0


def test_console_script_runs(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "escna.cli", "boundary", "--system", "uu", "--m", "2", "--k", "100", "--omega", "100"],
        capture_output=True, text=True, cwd=tmp_path,
    )
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[1].startswith("100,2.0317460317")
    assert (tmp_path / "escna-manifest.json").exists()

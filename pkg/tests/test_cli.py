import hashlib
import json

import pytest

from windcap.cli import main


def _run(*argv):
    return main([str(a) for a in argv])


def _manifest_ok(out):
    man = json.loads((out / "manifest.json").read_text())
    for name, digest in man["outputs"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    return man


def test_capacity_three_node(data_dir, tmp_path, capsys):
    out = tmp_path / "cap"
    assert _run("capacity", "--network", data_dir / "three_node.json", "--out", out) == 0
    rep = json.loads((out / "capacity.json").read_text())
    assert len(rep["nodes"]) == 2
    ver = json.loads((out / "verification.json").read_text())
    assert ver["pass_rate"] == 1.0 and ver["samples"] == 1002
    man = _manifest_ok(out)
    assert man["seed"] == 42 and set(man["outputs"]) == {"capacity.json", "capacity.csv", "verification.json"}
    assert "verification 1002/1002" in capsys.readouterr().out


def test_capacity_with_scenario(data_dir, tmp_path):
    out = tmp_path / "cap"
    assert _run("capacity", "--network", data_dir / "wf19.json", "--scenario", data_dir / "scenario_s3.json",
                "--out", out, "--samples", 50) == 0


def test_missing_file_exit_2(tmp_path, capsys):
    assert _run("capacity", "--network", tmp_path / "nope.json", "--out", tmp_path / "o") == 2
    assert "not found" in capsys.readouterr().err


def test_malformed_network_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert _run("capacity", "--network", bad, "--out", tmp_path / "o") == 2


def test_infeasible_exit_1(data_dir, tmp_path):
    net = json.loads((data_dir / "three_node.json").read_text())
    net["v0"] = 1.2
    path = tmp_path / "hot.json"
    path.write_text(json.dumps(net))
    assert _run("capacity", "--network", path, "--out", tmp_path / "o") == 1


def test_sweep_nonconvex(data_dir, tmp_path):
    out = tmp_path / "sw"
    assert _run("sweep", "--network", data_dir / "three_node.json", "--out", out, "--steps", 41) == 0
    summary = json.loads((out / "sweep_summary.json").read_text())
    assert summary["nonconvex"]
    assert len((out / "sweep.csv").read_text().splitlines()) == 41 * 41 + 1
    _manifest_ok(out)


def test_pq_curve(data_dir, tmp_path):
    out = tmp_path / "pq"
    assert _run("pq-curve", "--network", data_dir / "wf19.json", "--out", out, "--levels", 4) == 0
    lines = (out / "pq_curve.csv").read_text().splitlines()
    assert lines[0] == "p_turbine_mw,q_head_plus_mvar,q_head_minus_mvar,binding_tag"
    assert len(lines) == 5


def test_simulate_two_modes(data_dir, tmp_path):
    out = tmp_path / "sim"
    for mode in ("cia", "grid_agnostic"):
        assert _run("simulate", "--network", data_dir / "wf19.json", "--config", data_dir / "controller.json",
                    "--mode", mode, "--out", out) == 0
    cia = json.loads((out / "summary_cia.json").read_text())
    agn = json.loads((out / "summary_grid_agnostic.json").read_text())
    assert cia["steady_state_violation_steps"] == 0
    assert agn["steady_state_violation_steps"] >= 1


def test_compare_deterministic(data_dir, tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"cmp{k}"
        assert _run("compare", "--network", data_dir / "wf19.json", "--scenario", data_dir / "scenarios.json",
                    "--out", out) == 0
        outs.append(out)
    for name in ("compare.csv", "manifest.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_verify(data_dir, tmp_path):
    out = tmp_path / "v"
    assert _run("verify", "--network", data_dir / "three_node.json", "--out", out, "--samples", 100) == 0
    summary = json.loads((out / "verify.json").read_text())
    assert summary["power_flow_converged"] and summary["admissible"] == summary["samples"]


def test_requires_command():
    with pytest.raises(SystemExit):
        main([])

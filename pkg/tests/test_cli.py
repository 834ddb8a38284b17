import json
from pathlib import Path

import pytest

from topt.artifacts import read_density, read_history_csv
from topt.main import (EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, RESOLVED_CONFIG, WARNINGS_FILE, main, max_jobs,
                       pair_dirname)

FIXTURES = Path(__file__).resolve().parent.parent / "presets" / "fixtures"


def write_config(path, steps=3, **sections):
    data = {
        "PROBLEM": {"KIND": "heat"},
        "DOMAIN": {"NX": 8, "NY": 8},
        "BOUNDARY": {"SEGMENTS": [{"EDGE": "left", "START": 0.375, "END": 0.625, "TAG": "Gamma0"}]},
        "FLOW": {"STEPS": steps, "SOLVER": "direct", "CHECKPOINT_EVERY": 1},
        "RUN": {"OUTPUT": str(path.parent / "default-out")},
    }
    for section, values in sections.items():
        data.setdefault(section, {}).update(values)
    path.write_text(json.dumps(data))
    return str(path)


def last_line(capsys):
    return capsys.readouterr().out.strip().splitlines()[-1]


def test_run_writes_artifacts(tmp_path):
    out = tmp_path / "run"
    assert main(["run", write_config(tmp_path / "run.json"), "--out", str(out)]) == EXIT_OK
    for name in (RESOLVED_CONFIG, "history.csv", "density.vtk", "objective.svg", "mass_error.svg"):
        assert (out / name).exists(), name
    header, data = read_history_csv(out / "history.csv")
    assert header[:2] == ["step", "objective"]
    assert data.shape[0] == 4
    mesh, rho = read_density(out / "density.vtk")
    assert (mesh.nx, mesh.ny) == (8, 8)
    resolved = json.loads((out / RESOLVED_CONFIG).read_text())
    assert resolved["FLOW"]["STEPS"] == 3
    assert resolved["MATERIAL"]["A"] == 1.3


def test_run_defaults_to_configured_output(tmp_path):
    assert main(["run", write_config(tmp_path / "run.json", steps=0)]) == EXIT_OK
    _, data = read_history_csv(tmp_path / "default-out" / "history.csv")
    assert data.shape[0] == 1


def test_malformed_config_exits_with_config_status(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"FLOW": {"STEPS": 3,,}}')
    out = tmp_path / "never"
    assert main(["run", str(path), "--out", str(out)]) == EXIT_CONFIG
    assert not out.exists()
    assert "ConfigError" in capsys.readouterr().out


def test_invalid_field_exits_with_config_status(tmp_path):
    path = write_config(tmp_path / "run.json", FLOW={"TAU": -1.0})
    assert main(["run", path, "--out", str(tmp_path / "out")]) == EXIT_CONFIG


def test_sweep_writes_summary(tmp_path):
    path = write_config(tmp_path / "sweep.json", steps=2, SWEEP={
        "DELTAS": [1e-2], "ETAS": [1e-2, 1e-3], "JOBS": 2,
        "TAU_MAP": [{"DELTA": 1e-2, "ETA": 1e-3, "TAU": 3e-4}],
    })
    out = tmp_path / "sweep"
    assert main(["sweep", path, "--out", str(out)]) == EXIT_OK
    header, data = read_history_csv(out / pair_dirname(1e-2, 1e-3) / "history.csv")
    assert data.shape[0] == 3
    lines = (out / "summary.csv").read_text().splitlines()
    assert lines[0].startswith("delta,eta,tau,status")
    rows = [line.split(",") for line in lines[1:]]
    assert len(rows) == 2
    assert all(row[3] == "ok" for row in rows)
    taus = {float(row[1]): float(row[2]) for row in rows}
    assert taus == {1e-2: 1e-3, 1e-3: 3e-4}
    resolved = json.loads((out / pair_dirname(1e-2, 1e-3) / RESOLVED_CONFIG).read_text())
    assert resolved["FLOW"]["TAU"] == 3e-4


def test_sweep_records_warnings(tmp_path, monkeypatch):
    monkeypatch.setenv("TOPT_THREADS", "many")
    path = write_config(tmp_path / "sweep.json", steps=1, SWEEP={"DELTAS": [1e-2], "ETAS": [1e-2]})
    out = tmp_path / "sweep"
    assert main(["sweep", path, "--out", str(out)]) == EXIT_OK
    history = json.loads((out / WARNINGS_FILE).read_text())
    assert any("TOPT_THREADS" in entry["message"] and entry["level"] == "WARNING" for entry in history)


def test_verify_order_needs_three_etas(tmp_path):
    path = write_config(tmp_path / "order.json", ORDER={"ETAS": [1e-2]})
    assert main(["verify-order", path, "--out", str(tmp_path / "order")]) == EXIT_CONFIG


def test_verify_order_reports_slope(tmp_path, capsys):
    path = write_config(tmp_path / "order.json", steps=4, DOMAIN={"NX": 4, "NY": 4},
                        BOUNDARY={"SEGMENTS": [{"EDGE": "left", "START": 0.25, "END": 0.75, "TAG": "Gamma0"}]},
                        ORDER={"ETAS": [1e-3, 1e-1, 1e-2], "ETA_REF": 1e-5})
    out = tmp_path / "order"
    assert main(["verify-order", path, "--out", str(out)]) == EXIT_OK
    assert last_line(capsys).startswith("slope ")
    header, data = read_history_csv(out / "order.csv")
    assert header == ["eta", "error", "fitted", "exact_error"]
    assert list(data[:, 0]) == [1e-1, 1e-2, 1e-3]
    assert (data[:, 1] > 0).all() and (data[:, 3] >= 0).all()
    assert (out / "order.svg").exists()


def test_w2_between_point_masses(capsys):
    assert main(["w2", str(FIXTURES / "point_a.csv"), str(FIXTURES / "point_b.csv")]) == EXIT_OK
    assert float(last_line(capsys)) == pytest.approx(0.5, rel=1e-9)


def test_w2_of_a_file_with_itself(capsys):
    path = str(FIXTURES / "point_a.csv")
    assert main(["w2", path, path]) == EXIT_OK
    assert float(last_line(capsys)) == pytest.approx(0.0, abs=1e-9)


def test_w2_entropic_agrees(capsys):
    args = ["w2", str(FIXTURES / "point_a.csv"), str(FIXTURES / "point_b.csv"), "--method", "entropic"]
    assert main(args) == EXIT_OK
    assert float(last_line(capsys)) == pytest.approx(0.5, rel=1e-2)


def test_w2_linearized(capsys):
    path = str(FIXTURES / "point_a.csv")
    assert main(["w2", path, path, "--method", "linearized"]) == EXIT_OK
    assert float(last_line(capsys)) == 0.0
    assert main(["w2", path, str(FIXTURES / "point_b.csv"), "--method", "linearized"]) == EXIT_OK
    assert float(last_line(capsys)) > 0


def test_w2_rejects_mismatched_meshes(tmp_path):
    other = tmp_path / "other.csv"
    other.write_text("x,y,rho\n0,0,1\n1,0,1\n0,1,1\n1,1,1\n")
    assert main(["w2", str(FIXTURES / "point_a.csv"), str(other)]) == EXIT_NUMERICAL


def test_w2_missing_file():
    assert main(["w2", "no-such-a.csv", "no-such-b.csv"]) == EXIT_NUMERICAL


def test_max_jobs_respects_environment(monkeypatch):
    monkeypatch.setenv("TOPT_THREADS", "2")
    assert max_jobs(8) == 2
    monkeypatch.setenv("TOPT_THREADS", "many")
    assert max_jobs(3) == 3
    monkeypatch.delenv("TOPT_THREADS")
    assert max_jobs(0) == 1

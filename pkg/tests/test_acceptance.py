"""Full-size reproduction runs from the shipped presets.

These take minutes each; run them with `pytest -m slow`.
"""

from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from topt.artifacts import read_density
from topt.flow import FlowSolver, verify_eta_order
from topt.main import EXIT_OK, main
from topt.runconfig import RunConfig

PRESETS = Path(__file__).resolve().parent.parent / "presets"
PAIRS = [f"d{d}_e{e}" for d in (2, 3, 4) for e in (2, 3, 4)]

pytestmark = pytest.mark.slow


def load_preset(name, **flow):
    cfg, _ = RunConfig.from_file(str(PRESETS / f"{name}.json"))
    if flow:
        cfg = replace(cfg, flow=replace(cfg.flow, **flow))
    return cfg


@pytest.mark.parametrize("name", ["heat_d2_e2", "elastic_d2_e2"])
def test_mass_is_conserved(name):
    cfg = load_preset(name)
    mesh = cfg.build_mesh()
    _, history = FlowSolver(cfg.build_problem(mesh), cfg.flow_params()).run(cfg.initial_density(mesh))
    assert history.max_mass_drift() < 1e-8
    masses = np.array([r.total_mass for r in history.records])
    assert np.max(np.abs(np.diff(masses))) <= 1e-10 * masses[0]


def test_heat_flow_dissipates_for_200_steps():
    cfg = load_preset("heat_d2_e2", steps=200)
    mesh = cfg.build_mesh()
    rho, history = FlowSolver(cfg.build_problem(mesh), cfg.flow_params()).run(cfg.initial_density(mesh))
    assert history.dissipation_violations == 0
    assert history.negativity_events == 0
    assert history[-1].objective < history[0].objective
    assert rho.min() > 0


def test_eta_order():
    cfg = load_preset("verify_order")
    mesh = cfg.build_mesh()
    report = verify_eta_order(cfg.build_problem(mesh), cfg.flow_params(), list(cfg.order.etas),
                              cfg.order.eta_ref, coarsen=cfg.order.coarsen, metric=cfg.order.metric,
                              rho0=cfg.initial_density(mesh))
    assert report.metric == "linearized"
    assert 0.3 <= report.slope <= 1.2
    assert len(report.exact_errors) == len(report.errors)
    # errors shrink with eta
    assert report.errors[0] > report.errors[1] > report.errors[2] > 0


def test_presets_match_parameter_study():
    heat = [load_preset(f"heat_{p}") for p in PAIRS]
    elastic = [load_preset(f"elastic_{p}") for p in PAIRS]
    assert {(c.flow.delta, c.flow.eta) for c in heat} == {(d, e) for d in (1e-2, 1e-3, 1e-4)
                                                         for e in (1e-2, 1e-3, 1e-4)}
    for cfg in elastic:
        assert cfg.material.lambda1 == pytest.approx(15 / 26)
        assert cfg.material.lambda2 == pytest.approx(5 / 13)
        assert cfg.g == (0.0, -1.0)
        assert cfg.initial.rho0 == 2.0
    assert load_preset("heat_d4_e3").flow.tau == 3e-4
    assert load_preset("elastic_d4_e3").flow.tau == 1e-3
    assert load_preset("elastic_d2_e4").flow.tau == 3e-3


@pytest.mark.parametrize("name", [f"{kind}_{p}" for kind in ("heat", "elastic") for p in PAIRS])
def test_preset_runs_separate_material(name, tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(PRESETS / f"{name}.json"), "--out", str(out)]) == EXIT_OK
    for artifact in ("history.csv", "density.vtk", "objective.svg", "mass_error.svg"):
        assert (out / artifact).exists()
    _, rho = read_density(out / "density.vtk")
    # positive density with max/min nodal ratio above 10
    assert rho.min() > 0
    assert rho.max() > 10 * rho.min()

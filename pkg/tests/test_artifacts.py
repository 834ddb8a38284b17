import numpy as np
import pytest

from topt.artifacts import (ArtifactError, mesh_from_points, plot_history, plot_order, read_density,
                            read_history_csv, write_density_csv, write_history_csv, write_vtk)
from topt.flow import EtaOrderReport, FlowHistory, FlowRecord
from topt.mesh import MeshError, build_rect_mesh


@pytest.fixture
def history():
    h = FlowHistory()
    for i, j in enumerate([1.0, 0.8, 0.7]):
        h.append(FlowRecord(i, j, 2.0 * (1 + 1e-12 * i), 0.5, 1.5, 10 + i, 0))
    return h


def test_vtk_layout(tmp_path):
    mesh = build_rect_mesh(2.0, 1.0, 2, 1)
    rho = np.arange(mesh.num_nodes, dtype=float)
    path = tmp_path / "density.vtk"
    write_vtk(path, mesh, rho, u=np.zeros(2 * mesh.num_nodes))
    lines = path.read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert lines[2:5] == ["ASCII", "DATASET UNSTRUCTURED_GRID", "POINTS 6 double"]
    assert "CELLS 4 16" in lines
    assert lines.count("5") == 4
    assert "SCALARS rho double 1" in lines
    assert "VECTORS u double" in lines


def test_vtk_numbers_are_plain_floats(tmp_path):
    mesh = build_rect_mesh(1.0, 1.0, 2, 2)
    rho = np.full(mesh.num_nodes, np.float64(0.5))
    path = tmp_path / "density.vtk"
    write_vtk(path, mesh, rho, u=np.linspace(0.0, 1.0, 2 * mesh.num_nodes))
    text = path.read_text()
    assert "np." not in text and "float64" not in text
    lines = text.splitlines()
    start = lines.index("POINTS 9 double") + 1
    points = np.array([[float(w) for w in line.split()] for line in lines[start:start + 9]])
    np.testing.assert_array_equal(points[:, :2], mesh.nodes)
    _, read_rho = read_density(path)
    np.testing.assert_array_equal(read_rho, rho)


def test_vtk_density_reads_back(tmp_path, rng):
    mesh = build_rect_mesh(1.0, 1.0, 6, 4)
    rho = rng.uniform(size=mesh.num_nodes)
    path = tmp_path / "density.vtk"
    write_vtk(path, mesh, rho, u=rng.standard_normal(mesh.num_nodes))
    read_mesh, read_rho = read_density(path)
    assert read_mesh.same_geometry(mesh)
    np.testing.assert_array_equal(read_rho, rho)


def test_csv_density_reads_back(tmp_path, rng):
    mesh = build_rect_mesh(2.0, 1.0, 4, 2)
    rho = rng.uniform(size=mesh.num_nodes)
    path = tmp_path / "density.csv"
    write_density_csv(path, mesh, rho)
    read_mesh, read_rho = read_density(path)
    assert (read_mesh.lx, read_mesh.ly, read_mesh.nx, read_mesh.ny) == (2.0, 1.0, 4, 2)
    np.testing.assert_allclose(read_rho, rho, rtol=1e-15)


def test_unreadable_density_files(tmp_path):
    with pytest.raises(ArtifactError):
        read_density(tmp_path / "missing.vtk")
    bad = tmp_path / "bad.vtk"
    bad.write_text("not a vtk file\n")
    with pytest.raises(ArtifactError):
        read_density(bad)
    narrow = tmp_path / "narrow.csv"
    narrow.write_text("x,y\n0,0\n1,1\n")
    with pytest.raises(ArtifactError):
        read_density(narrow)


def test_mesh_from_points_requires_node_order():
    mesh = build_rect_mesh(1.0, 1.0, 3, 3)
    assert mesh_from_points(mesh.nodes).same_geometry(mesh)
    with pytest.raises(MeshError):
        mesh_from_points(mesh.nodes[::-1])


def test_history_csv(tmp_path, history):
    path = tmp_path / "history.csv"
    write_history_csv(path, history)
    header, data = read_history_csv(path)
    assert header == list(FlowHistory.CSV_COLUMNS)
    assert data.shape == (3, len(FlowHistory.CSV_COLUMNS))
    np.testing.assert_array_equal(data[:, 0], [0, 1, 2])
    np.testing.assert_allclose(data[:, 1], [1.0, 0.8, 0.7])
    assert data[0, 3] == 0.0
    assert data[2, 3] == pytest.approx(2e-12, rel=1e-3)


def test_plots_are_svg(tmp_path, history):
    plot_history(tmp_path, history, title="heat")
    for name in ("objective.svg", "mass_error.svg"):
        assert "<svg" in (tmp_path / name).read_text()
    report = EtaOrderReport([1e-2, 1e-3, 1e-4], [1e-2, 3e-3, 1e-3], 0.5, np.log(0.1), [True, True, True],
                            exact_errors=[5e-2, 3e-2, 2e-2])
    plot_order(tmp_path / "order.svg", report)
    text = (tmp_path / "order.svg").read_text()
    assert "<svg" in text

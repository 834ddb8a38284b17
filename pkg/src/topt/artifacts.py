"""Run artifacts: history and summary CSV, VTK legacy density files, SVG plots."""

import csv
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
from matplotlib.figure import Figure

from topt.mesh import Mesh, MeshError, build_rect_mesh

VTK_HEADER = "# vtk DataFile Version 3.0"
VTK_TRIANGLE = 5


class ArtifactError(ValueError):
    """Unreadable or inconsistent artifact file."""


def write_csv(path, header: Sequence[str], rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def write_history_csv(path, history):
    write_csv(path, history.CSV_COLUMNS, history.rows())


def read_history_csv(path) -> Tuple[list, np.ndarray]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ArtifactError(f"{path}: empty file")
    return rows[0], np.array(rows[1:], dtype=float).reshape(len(rows) - 1, len(rows[0]))


def write_vtk(path, mesh: Mesh, rho: np.ndarray, u: Optional[np.ndarray] = None, title: str = "topt density"):
    """Legacy ASCII unstructured grid with rho (and u) as point data."""
    n = mesh.num_nodes
    lines = [VTK_HEADER, title, "ASCII", "DATASET UNSTRUCTURED_GRID", f"POINTS {n} double"]
    lines += [f"{x:.17g} {y:.17g} 0.0" for x, y in mesh.nodes]
    t = mesh.num_triangles
    lines.append(f"CELLS {t} {4 * t}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {t}")
    lines += [str(VTK_TRIANGLE)] * t
    lines += [f"POINT_DATA {n}", "SCALARS rho double 1", "LOOKUP_TABLE default"]
    lines += [f"{v:.17g}" for v in rho]
    if u is not None:
        u = np.asarray(u, dtype=float)
        if u.shape == (2 * n,):
            lines.append("VECTORS u double")
            lines += [f"{ux:.17g} {uy:.17g} 0.0" for ux, uy in u.reshape(n, 2)]
        else:
            lines += ["SCALARS u double 1", "LOOKUP_TABLE default"]
            lines += [f"{v:.17g}" for v in u]
    Path(path).write_text("\n".join(lines) + "\n")


def _read_vtk(path) -> Tuple[np.ndarray, np.ndarray]:
    tokens = Path(path).read_text().split("\n")
    if not tokens or not tokens[0].startswith("# vtk DataFile"):
        raise ArtifactError(f"{path}: not a VTK legacy file")
    points = rho = None
    i = 0
    while i < len(tokens):
        words = tokens[i].split()
        if words[:1] == ["POINTS"]:
            n = int(words[1])
            block = np.array(" ".join(tokens[i + 1:i + 1 + n]).split(), dtype=float)
            points = block.reshape(n, 3)[:, :2]
            i += n
        elif words[:2] == ["SCALARS", "rho"]:
            n = points.shape[0] if points is not None else 0
            start = i + 2 if tokens[i + 1].startswith("LOOKUP_TABLE") else i + 1
            rho = np.array(" ".join(tokens[start:start + n]).split(), dtype=float)
            i = start + n - 1
        i += 1
    if points is None or rho is None or rho.shape[0] != points.shape[0]:
        raise ArtifactError(f"{path}: missing POINTS or SCALARS rho")
    return points, rho


def _read_csv(path) -> Tuple[np.ndarray, np.ndarray]:
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as e:
        raise ArtifactError(f"{path}: {e}") from e
    if data.shape[1] != 3:
        raise ArtifactError(f"{path}: expected columns x,y,rho, got {data.shape[1]} columns")
    return data[:, :2], data[:, 2]


def mesh_from_points(points: np.ndarray) -> Mesh:
    """The structured mesh whose nodes are exactly these points, in node order."""
    xs, ys = np.unique(points[:, 0]), np.unique(points[:, 1])
    if len(xs) < 2 or len(ys) < 2:
        raise ArtifactError("Density file does not describe a 2D grid")
    mesh = build_rect_mesh(float(xs[-1]), float(ys[-1]), len(xs) - 1, len(ys) - 1)
    if mesh.num_nodes != points.shape[0] or not np.allclose(mesh.nodes, points, atol=1e-9 * mesh.lx):
        raise MeshError("Density file nodes are not a structured grid in node order")
    return mesh


def read_density(path) -> Tuple[Mesh, np.ndarray]:
    """Density and its mesh from a VTK legacy file or a CSV file with columns x,y,rho."""
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"{path}: no such file")
    points, rho = _read_vtk(path) if path.suffix.lower() == ".vtk" else _read_csv(path)
    return mesh_from_points(points), rho


def write_density_csv(path, mesh: Mesh, rho: np.ndarray):
    write_csv(path, ("x", "y", "rho"), ([x, y, float(r)] for (x, y), r in zip(mesh.nodes, rho)))


def _save(fig: Figure, path):
    fig.tight_layout()
    fig.savefig(path, format="svg")


def plot_history(out_dir, history, title: str = ""):
    """objective.svg and mass_error.svg for one run."""
    out_dir = Path(out_dir)
    steps = [r.step for r in history.records]

    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot()
    ax.plot(steps, history.objectives, color="black")
    ax.set_xlabel("step")
    ax.set_ylabel("objective")
    ax.set_title(title)
    _save(fig, out_dir / "objective.svg")

    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot()
    ax.plot(steps, history.log_rel_mass_errors(), color="black")
    ax.set_xlabel("step")
    ax.set_ylabel("log(m_i / m_0)")
    ax.set_title(title)
    _save(fig, out_dir / "mass_error.svg")


def plot_order(path, report):
    """log-log plot of E(eta) with the fitted line."""
    etas = np.array([e for e, used in zip(report.etas, report.fitted) if used])
    errors = np.array([e for e, used in zip(report.errors, report.fitted) if used])
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot()
    ax.loglog(etas, errors, "o", color="black", label=f"E(eta), {report.metric}")
    exact = [(eta, e) for eta, e in zip(report.etas, report.exact_errors) if e > 0]
    if exact and report.metric != "exact":
        ax.loglog(*zip(*exact), "x", color="gray", label="E(eta), exact nodal")
    ax.loglog(etas, np.exp(report.intercept) * etas ** report.slope, "--", color="gray",
              label=f"slope {report.slope:.3f}")
    ax.set_xlabel("eta")
    ax.set_ylabel("max W2")
    ax.legend()
    _save(fig, path)

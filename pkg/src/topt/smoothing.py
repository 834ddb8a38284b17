"""Implicit Neumann-heat smoothing and the density-weighted sensitivity filter.

heat_smooth solves (M + delta K1) x = M field, one implicit Euler step of the
Neumann heat equation. filter_sensitivity solves (M + eta K(rho_bar)) x = M S.
Both keep the integral 1^T M x = 1^T M field because constants lie in the
kernel of every stiffness matrix.
"""

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
import scipy.sparse as sp

from topt import fem
from topt.linsys import DEFAULT_TOL, SolveReport, SpdFactorization, solve_spd
from topt.mesh import Mesh

MASS_MATRICES = ("lumped", "consistent")


@dataclass(frozen=True)
class SmoothingParams:
    delta: float = 1e-2
    epsilon: float = 1e-7
    eta: float = 1e-2

    def __post_init__(self):
        for name in ("delta", "epsilon", "eta"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")


def total_mass(mesh: Mesh, rho: np.ndarray) -> float:
    """1^T M rho, identical for the consistent and lumped mass matrices."""
    return float(fem.lumped_mass(mesh) @ rho)


def _mass_operator(mesh: Mesh, mass: str) -> sp.csr_matrix:
    if mass == "consistent":
        return fem.assemble_mass(mesh)
    if mass == "lumped":
        return sp.diags(fem.lumped_mass(mesh)).tocsr()
    raise ValueError(f"Unknown mass matrix {mass!r}, expected one of {MASS_MATRICES}")


def heat_smooth(mesh: Mesh, field: np.ndarray, delta: float, mass: str = "lumped",
                tol: float = DEFAULT_TOL, solver: str = "direct") -> Tuple[np.ndarray, SolveReport]:
    """One implicit Euler step of the Neumann heat equation with step delta."""
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    field = np.asarray(field, dtype=float)
    if delta == 0:
        return field.copy(), SolveReport(0, 0.0, "direct")
    M = _mass_operator(mesh, mass)
    A = M + delta * fem.assemble_stiffness(mesh, 1.0)
    return solve_spd(A.tocsr(), M @ field, tol=tol, method=solver)


def filter_sensitivity(mesh: Mesh, s_delta: np.ndarray, rho_bar: np.ndarray, eta: float,
                       tol: float = DEFAULT_TOL, solver: str = "direct") -> Tuple[np.ndarray, SolveReport]:
    """Solve -eta div(rho_bar grad x) + x = s_delta with natural Neumann conditions.

    rho_bar enters as the vertex-averaged element coefficient and must be >= 0.
    """
    if eta < 0:
        raise ValueError(f"eta must be >= 0, got {eta}")
    s_delta = np.asarray(s_delta, dtype=float)
    if eta == 0:
        return s_delta.copy(), SolveReport(0, 0.0, "direct")
    M = fem.assemble_mass(mesh)
    K = fem.assemble_stiffness(mesh, fem.element_average(mesh, rho_bar))
    return solve_spd((M + eta * K).tocsr(), M @ s_delta, tol=tol, method=solver)


class Smoother:
    """heat_smooth with the operator factorized once per (delta, mass) pair.

    The flow applies the same smoothing operators every step, so their
    factorizations are cached here.
    """

    def __init__(self, mesh: Mesh, mass: str = "lumped"):
        if mass not in MASS_MATRICES:
            raise ValueError(f"Unknown mass matrix {mass!r}, expected one of {MASS_MATRICES}")
        self.mesh = mesh
        self.mass = mass
        self._M = _mass_operator(mesh, mass)
        self._factors: Dict[float, SpdFactorization] = {}

    def smooth(self, field: np.ndarray, delta: float) -> Tuple[np.ndarray, SolveReport]:
        if delta < 0:
            raise ValueError(f"delta must be >= 0, got {delta}")
        field = np.asarray(field, dtype=float)
        if delta == 0:
            return field.copy(), SolveReport(0, 0.0, "direct")
        if delta not in self._factors:
            A = (self._M + delta * fem.assemble_stiffness(self.mesh, 1.0)).tocsr()
            self._factors[delta] = SpdFactorization(A)
        return self._factors[delta].solve(self._M @ field)

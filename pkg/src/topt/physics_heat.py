"""Density-dependent heat conduction: state solve, objective and sensitivity."""

from dataclasses import dataclass, field
from typing import ClassVar, Optional

import numpy as np

import topt.coresys.logger as logger
from topt import fem
from topt.linsys import DEFAULT_TOL, SolveReport, solve_spd
from topt.material import DENSITY_FLOOR, KappaParams, clamp_density, kappa, kappa_prime
from topt.mesh import GAMMA0, Mesh


@dataclass(frozen=True, eq=False)
class HeatProblem:
    """-div(kappa(rho) grad u) = f in D, u = 0 on Gamma0, flux g on Gamma1."""
    kind: ClassVar[str] = "heat"

    mesh: Mesh
    kappa: KappaParams
    f: float = 0.0
    g: float = 0.0
    density_floor: float = DENSITY_FLOOR
    solver: str = "auto"
    tol: float = DEFAULT_TOL
    _load: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.dirichlet_dofs().size == 0:
            raise ValueError("HeatProblem needs a nonempty Gamma0")
        object.__setattr__(self, "_load", fem.assemble_load(self.mesh, self.f, self.g))

    @property
    def load(self) -> np.ndarray:
        return self._load

    def dirichlet_dofs(self) -> np.ndarray:
        return self.mesh.nodes_with_tag(GAMMA0)


@dataclass(frozen=True, eq=False)
class StateSolution:
    u: np.ndarray
    objective: float
    solve_report: SolveReport
    coeff: np.ndarray  # element coefficients the state was solved with


def element_coefficients(prob, rho: np.ndarray) -> np.ndarray:
    """kappa of the vertex-averaged, floored density on every element."""
    rho_elem = clamp_density(fem.element_average(prob.mesh, rho), prob.density_floor)
    return kappa(rho_elem, prob.kappa)


def solve_state_heat(prob: HeatProblem, rho: np.ndarray) -> StateSolution:
    coeff = element_coefficients(prob, rho)
    K = fem.assemble_stiffness(prob.mesh, coeff)
    F = prob.load
    if not np.any(F):
        u = np.zeros(prob.mesh.num_nodes)
        return StateSolution(u, 0.0, SolveReport(0, 0.0, "cg"), coeff)
    A, b = fem.apply_dirichlet(K, F, prob.dirichlet_dofs())
    u, report = solve_spd(A, b, tol=prob.tol, method=prob.solver)
    objective = 0.5 * float(F @ u)
    logger.trace(f"Heat: J={objective:.6e} ({report.method}, {report.iterations} it, "
                 f"res {report.relative_residual:.1e})")
    return StateSolution(u, objective, report, coeff)


def dirichlet_energy(prob: HeatProblem, state: StateSolution) -> float:
    """1/2 u^T K(kappa) u, equal to the objective at a solved state."""
    K = fem.assemble_stiffness(prob.mesh, state.coeff)
    return 0.5 * float(state.u @ (K @ state.u))


def sensitivity_heat(prob: HeatProblem, rho: np.ndarray, state: StateSolution) -> np.ndarray:
    """Nodal sensitivity: lumped projection of scale * kappa'(rho_T) |grad u|^2_T."""
    rho_elem = clamp_density(fem.element_average(prob.mesh, rho), prob.density_floor)
    grad = fem.element_gradients(prob.mesh, state.u)
    energy = np.einsum("tk,tk->t", grad, grad)
    s_elem = prob.kappa.sensitivity_scale * kappa_prime(rho_elem, prob.kappa) * energy
    return fem.project_to_nodes(prob.mesh, s_elem)

"""Density-dependent plane linear elasticity: state solve, mean compliance and sensitivity."""

from dataclasses import dataclass, field
from typing import ClassVar, Optional, Sequence

import numpy as np

import topt.coresys.logger as logger
from topt import fem
from topt.linsys import DEFAULT_TOL, SolveReport, solve_spd
from topt.material import DENSITY_FLOOR, KappaParams, clamp_density, kappa_prime
from topt.mesh import GAMMA0, Mesh
from topt.physics_heat import StateSolution, element_coefficients


@dataclass(frozen=True, eq=False)
class ElasticProblem:
    """-div(kappa(rho) sigma(u)) = f in D, u = 0 on Gamma0, traction g on Gamma1."""
    kind: ClassVar[str] = "elastic"

    mesh: Mesh
    kappa: KappaParams
    lambda1: float = 15.0 / 26.0
    lambda2: float = 5.0 / 13.0
    f: Sequence[float] = (0.0, 0.0)
    g: Sequence[float] = (0.0, -1.0)
    density_floor: float = DENSITY_FLOOR
    solver: str = "auto"
    tol: float = DEFAULT_TOL
    _load: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if not (self.lambda1 > 0 and self.lambda2 > 0):
            raise ValueError(f"Lame constants must be positive, got {self.lambda1}, {self.lambda2}")
        if self.dirichlet_dofs().size == 0:
            raise ValueError("ElasticProblem needs a nonempty Gamma0")
        object.__setattr__(self, "_load", fem.assemble_load(self.mesh, self.f, self.g))

    @property
    def load(self) -> np.ndarray:
        return self._load

    def dirichlet_dofs(self) -> np.ndarray:
        nodes = self.mesh.nodes_with_tag(GAMMA0)
        return np.sort(np.concatenate([2 * nodes, 2 * nodes + 1]))


def solve_state_elastic(prob: ElasticProblem, rho: np.ndarray) -> StateSolution:
    coeff = element_coefficients(prob, rho)
    K = fem.assemble_elastic_stiffness(prob.mesh, coeff, prob.lambda1, prob.lambda2)
    F = prob.load
    if not np.any(F):
        u = np.zeros(2 * prob.mesh.num_nodes)
        return StateSolution(u, 0.0, SolveReport(0, 0.0, "cg"), coeff)
    A, b = fem.apply_dirichlet(K, F, prob.dirichlet_dofs())
    u, report = solve_spd(A, b, tol=prob.tol, method=prob.solver)
    objective = 0.5 * float(F @ u)
    logger.trace(f"Elastic: J={objective:.6e} ({report.method}, {report.iterations} it, "
                 f"res {report.relative_residual:.1e})")
    return StateSolution(u, objective, report, coeff)


def stress_strain_product(strain: np.ndarray, lambda1: float, lambda2: float) -> np.ndarray:
    """eps : sigma(eps) = 2 lambda1 |eps|^2 + lambda2 tr(eps)^2 for strains (T, 2, 2)."""
    trace = strain[:, 0, 0] + strain[:, 1, 1]
    return 2.0 * lambda1 * np.einsum("tij,tij->t", strain, strain) + lambda2 * trace ** 2


def element_stress(strain: np.ndarray, lambda1: float, lambda2: float) -> np.ndarray:
    trace = strain[:, 0, 0] + strain[:, 1, 1]
    return 2.0 * lambda1 * strain + lambda2 * trace[:, None, None] * np.eye(2)[None, :, :]


def compliance_energy(prob: ElasticProblem, state: StateSolution) -> float:
    """1/2 u^T K u, equal to the mean compliance at a solved state."""
    K = fem.assemble_elastic_stiffness(prob.mesh, state.coeff, prob.lambda1, prob.lambda2)
    return 0.5 * float(state.u @ (K @ state.u))


def sensitivity_elastic(prob: ElasticProblem, rho: np.ndarray, state: StateSolution) -> np.ndarray:
    """Nodal sensitivity: lumped projection of scale * kappa'(rho_T) (eps : sigma)_T."""
    rho_elem = clamp_density(fem.element_average(prob.mesh, rho), prob.density_floor)
    strain = fem.element_gradients(prob.mesh, state.u)
    energy = stress_strain_product(strain, prob.lambda1, prob.lambda2)
    s_elem = prob.kappa.sensitivity_scale * kappa_prime(rho_elem, prob.kappa) * energy
    return fem.project_to_nodes(prob.mesh, s_elem)

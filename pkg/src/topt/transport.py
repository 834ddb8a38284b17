"""Wasserstein distances between nodal densities.

Exact distances use the network simplex solver of POT (ot.emd). The entropic
estimate is the debiased Sinkhorn divergence built on POT's log-stabilized
epsilon-scaling solver. Densities that differ by less than a node spacing are
compared with the linearized distance, the density-weighted H^-1 norm of their
difference, which exact OT on the nodes cannot resolve.
"""

import warnings
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import ot

import topt.coresys.logger as logger
from topt import fem
from topt.linsys import solve_spd
from topt.material import DENSITY_FLOOR
from topt.mesh import Mesh

MAX_EXACT_SUPPORT = 512
# largest k with k * k <= MAX_EXACT_SUPPORT
MAX_COARSE_SIDE = 22
WEIGHT_TOL = 1e-12
ENTROPIC_TOL = 1e-6
# final Sinkhorn temperature relative to diam^2
DEFAULT_REG = 1e-5
METHODS = ("exact", "entropic", "linearized")


class TransportError(RuntimeError):
    """Transport problem could not be solved."""


class OversizeError(TransportError):
    """Support too large for the exact solver; use w2_entropic or coarsen first."""


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    points: np.ndarray        # (n, 2)
    weights: np.ndarray       # (n,), nonnegative, summing to one
    clamped_mass: float = 0.0  # negative mass removed before normalization

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[0] != self.weights.shape[0]:
            raise TransportError(f"Points {self.points.shape} and weights {self.weights.shape} do not match")
        if np.any(self.weights < 0):
            raise TransportError("Measure weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > WEIGHT_TOL:
            raise TransportError(f"Measure weights sum to {self.weights.sum():.15f}, expected 1")

    @classmethod
    def normalized(cls, points, weights) -> "DiscreteMeasure":
        points = np.asarray(points, dtype=float).reshape(len(weights), -1)
        weights = np.asarray(weights, dtype=float)
        total = weights.sum()
        if not total > 0:
            raise TransportError("Measure has zero total mass")
        return cls(points, weights / total)

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.weights))

    def compact(self) -> "DiscreteMeasure":
        """Drop atoms of zero weight."""
        keep = self.weights > 0
        return DiscreteMeasure(self.points[keep], self.weights[keep], self.clamped_mass)

    def mean(self) -> np.ndarray:
        return self.weights @ self.points


@dataclass(frozen=True, eq=False)
class TransportPlan:
    coupling: np.ndarray  # (n, m), nonnegative

    def marginal_errors(self, mu: DiscreteMeasure, nu: DiscreteMeasure) -> Tuple[float, float]:
        return (float(np.abs(self.coupling.sum(axis=1) - mu.weights).max()),
                float(np.abs(self.coupling.sum(axis=0) - nu.weights).max()))


def _emd(mu: DiscreteMeasure, nu: DiscreteMeasure, cost: np.ndarray) -> np.ndarray:
    plan, log = ot.emd(mu.weights, nu.weights, cost, numItermax=10_000_000, log=True)
    if log.get("warning"):
        raise TransportError(f"Network simplex did not finish: {log['warning']}")
    return plan


def _check_exact_size(mu: DiscreteMeasure, nu: DiscreteMeasure):
    if max(len(mu.weights), len(nu.weights)) > MAX_EXACT_SUPPORT:
        raise OversizeError(f"Supports of size {len(mu.weights)} and {len(nu.weights)} exceed "
                            f"{MAX_EXACT_SUPPORT}; coarsen or use the entropic solver")


def w2_exact(mu: DiscreteMeasure, nu: DiscreteMeasure) -> Tuple[float, TransportPlan]:
    """Exact 2-Wasserstein distance and an optimal coupling."""
    _check_exact_size(mu, nu)
    cost = ot.dist(mu.points, nu.points)  # squared Euclidean
    plan = _emd(mu, nu, cost)
    return float(np.sqrt(max(np.sum(plan * cost), 0.0))), TransportPlan(plan)


def w1_exact(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Exact 1-Wasserstein distance."""
    _check_exact_size(mu, nu)
    cost = ot.dist(mu.points, nu.points, metric="euclidean")
    plan = _emd(mu, nu, cost)
    return float(np.sum(plan * cost))


def diameter(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    pts = np.vstack([mu.points, nu.points])
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def _entropic_cost(a: np.ndarray, b: np.ndarray, cost: np.ndarray, reg: float,
                   max_iter: int, tol: float) -> Tuple[float, float]:
    """Transport cost of the entropic plan and its L1 marginal violation; cost is scaled to [0, 1]."""
    with warnings.catch_warnings():
        # capped inner stages warn; the final violation is checked by the caller
        warnings.simplefilter("ignore")
        plan = ot.bregman.sinkhorn_epsilon_scaling(a, b, cost, reg, numItermax=max_iter, epsilon0=1.0,
                                                   numInnerItermax=100, stopThr=(0.1 * tol) ** 2, warn=False)
    violation = float(np.abs(plan.sum(axis=1) - a).sum() + np.abs(plan.sum(axis=0) - b).sum())
    return float(np.sum(plan * cost)), violation


def w2_entropic(mu: DiscreteMeasure, nu: DiscreteMeasure, reg: float = DEFAULT_REG,
                max_iter: int = 200, tol: float = ENTROPIC_TOL) -> float:
    """Debiased Sinkhorn estimate of W2; reg is the temperature relative to diam^2.

    The estimate is sqrt(<P_ab, C> - (<P_aa, C> + <P_bb, C>) / 2) with the
    entropic plans P at temperature reg.
    """
    if not reg > 0:
        raise TransportError(f"reg must be > 0, got {reg}")
    mu, nu = mu.compact(), nu.compact()
    diam = diameter(mu, nu)
    if diam == 0.0:
        return 0.0
    scale = diam ** 2
    a, b = mu.weights, nu.weights

    c_ab, v_ab = _entropic_cost(a, b, ot.dist(mu.points, nu.points) / scale, reg, max_iter, tol)
    c_aa, v_aa = _entropic_cost(a, a, ot.dist(mu.points, mu.points) / scale, reg, max_iter, tol)
    c_bb, v_bb = _entropic_cost(b, b, ot.dist(nu.points, nu.points) / scale, reg, max_iter, tol)
    violation = max(v_ab, v_aa, v_bb)
    if not np.isfinite(c_ab + c_aa + c_bb):
        raise TransportError("Sinkhorn produced a non-finite plan")
    if violation > tol:
        logger.warning(f"Transport: Sinkhorn marginal violation {violation:.3e} above {tol:.1e}",
                       log_to_file=False)

    divergence = scale * (c_ab - 0.5 * (c_aa + c_bb))
    logger.trace(f"Transport: Sinkhorn divergence {divergence:.6e} at reg {reg:.1e}")
    return float(np.sqrt(max(divergence, 0.0)))


def _unit_density(mesh: Mesh, rho: np.ndarray) -> np.ndarray:
    rho = np.maximum(np.asarray(rho, dtype=float), 0.0)
    total = float(fem.lumped_mass(mesh) @ rho)
    if not total > 0:
        raise TransportError("Density has zero total mass")
    return rho / total


def w2_linearized(mesh: Mesh, rho_a: np.ndarray, rho_b: np.ndarray, floor: float = DENSITY_FLOOR) -> float:
    """W2 to first order in rho_b - rho_a, for two nearby nodal densities.

    Solves -div(rho_mid grad phi) = rho_b - rho_a with Neumann conditions,
    rho_mid the midpoint density, and returns sqrt(int rho_mid |grad phi|^2).
    Both densities are clamped at zero and normalized to unit mass first.
    """
    a, b = _unit_density(mesh, rho_a), _unit_density(mesh, rho_b)
    coeff = np.maximum(fem.element_average(mesh, 0.5 * (a + b)), floor)
    K = fem.assemble_stiffness(mesh, coeff)
    rhs = fem.assemble_mass(mesh) @ (b - a)
    if not np.any(rhs):
        return 0.0
    # node 0 carries the constant mode of the Neumann problem
    phi, _ = solve_spd(K[1:, 1:].tocsr(), rhs[1:], method="direct")
    return float(np.sqrt(max(phi @ rhs[1:], 0.0)))


def nodal_measure(mesh: Mesh, rho: np.ndarray) -> DiscreteMeasure:
    """Lumped nodal masses of rho on the mesh nodes, negatives clamped, normalized."""
    masses = fem.lumped_mass(mesh) * np.asarray(rho, dtype=float)
    negative = float(-masses[masses < 0].sum())
    masses = np.maximum(masses, 0.0)
    total = masses.sum()
    if not total > 0:
        raise TransportError("Density has zero total mass")
    if negative > 0:
        logger.debug(f"Transport: clamped {negative:.3e} of negative nodal mass")
    return DiscreteMeasure(mesh.nodes.copy(), masses / total, clamped_mass=negative)


def coarsen_measure(measure: DiscreteMeasure, k: int, lx: float, ly: float) -> DiscreteMeasure:
    """Bin atoms into a k x k grid over [0,lx]x[0,ly]; atoms move to cell centers.

    k is capped at MAX_COARSE_SIDE so the result always fits the exact solver.
    """
    if k < 1:
        raise TransportError(f"Coarsening grid must be >= 1, got {k}")
    if k > MAX_COARSE_SIDE:
        logger.debug(f"Transport: coarsening grid {k} capped at {MAX_COARSE_SIDE}")
        k = MAX_COARSE_SIDE
    ix = np.clip(np.floor(measure.points[:, 0] / lx * k).astype(int), 0, k - 1)
    iy = np.clip(np.floor(measure.points[:, 1] / ly * k).astype(int), 0, k - 1)
    cell = iy * k + ix
    weights = np.bincount(cell, weights=measure.weights, minlength=k * k)
    cx, cy = np.meshgrid((np.arange(k) + 0.5) * lx / k, (np.arange(k) + 0.5) * ly / k)
    centers = np.column_stack([cx.ravel(), cy.ravel()])
    keep = weights > 0
    w = weights[keep]
    return DiscreteMeasure(centers[keep], w / w.sum(), measure.clamped_mass)


def w2_between_densities(mesh: Mesh, rho_a: np.ndarray, rho_b: np.ndarray,
                         coarsen: int = MAX_COARSE_SIDE, method: str = "exact") -> float:
    """W2 between two nodal densities on one mesh.

    method "exact" bins both to coarsen x coarsen cells when they are too large
    for exact OT; "entropic" uses the Sinkhorn estimate on the nodes;
    "linearized" uses w2_linearized.
    """
    if method not in METHODS:
        raise TransportError(f"Unknown transport method {method!r}, expected one of {METHODS}")
    if method == "linearized":
        return w2_linearized(mesh, rho_a, rho_b)
    mu, nu = nodal_measure(mesh, rho_a).compact(), nodal_measure(mesh, rho_b).compact()
    if method == "entropic":
        return w2_entropic(mu, nu)
    if max(len(mu.weights), len(nu.weights)) > MAX_EXACT_SUPPORT:
        mu = coarsen_measure(mu, coarsen, mesh.lx, mesh.ly)
        nu = coarsen_measure(nu, coarsen, mesh.lx, mesh.ly)
    return w2_exact(mu, nu)[0]

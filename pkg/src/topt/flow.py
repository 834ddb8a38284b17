"""The filtered Wasserstein gradient flow and the eta-order check.

Every step smooths the density, solves the state problem, filters the
sensitivity and transports the density by the mass-conserving update

    M rho_{i+1} = M rho_i - sign * tau * K(rho_i) S_eta

where K(rho_i) is the stiffness weighted by the old density and sign is the
sign of the sensitivity scale.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

import topt.coresys.logger as logger
from topt import fem
from topt.linsys import DEFAULT_TOL, SolverError, SpdFactorization
from topt.material import DENSITY_FLOOR, MaterialError
from topt.physics_elastic import sensitivity_elastic, solve_state_elastic
from topt.physics_heat import sensitivity_heat, solve_state_heat
from topt.smoothing import MASS_MATRICES, Smoother, SmoothingParams, filter_sensitivity, total_mass
from topt.transport import MAX_COARSE_SIDE, METHODS, w2_between_densities

# J_{i+1} > J_i + DISSIPATION_TOL * J_0 counts as a dissipation violation
DISSIPATION_TOL = 1e-6
MIN_FIT_POINTS = 3

_PHYSICS = {
    "heat": (solve_state_heat, sensitivity_heat),
    "elastic": (solve_state_elastic, sensitivity_elastic),
}


class FlowError(RuntimeError):
    """A flow step failed; carries the history recorded so far."""

    def __init__(self, message: str, history: "FlowHistory"):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class FlowParams:
    smoothing: SmoothingParams = field(default_factory=SmoothingParams)
    tau: float = 1e-3
    steps: int = 500
    density_floor: float = DENSITY_FLOOR
    checkpoint_every: int = 10
    smoothing_mass: str = "lumped"
    solver: str = "direct"  # filter solves
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if int(self.steps) != self.steps or self.steps < 0:
            raise ValueError(f"steps must be a nonnegative integer, got {self.steps}")
        if self.checkpoint_every < 1:
            raise ValueError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        if not self.density_floor > 0:
            raise ValueError(f"density_floor must be > 0, got {self.density_floor}")
        if self.smoothing_mass not in MASS_MATRICES:
            raise ValueError(f"smoothing_mass must be one of {MASS_MATRICES}, got {self.smoothing_mass!r}")

    @property
    def delta(self) -> float:
        return self.smoothing.delta

    @property
    def epsilon(self) -> float:
        return self.smoothing.epsilon

    @property
    def eta(self) -> float:
        return self.smoothing.eta

    def with_eta(self, eta: float) -> "FlowParams":
        smoothing = SmoothingParams(self.delta, self.epsilon, eta)
        return FlowParams(smoothing, self.tau, self.steps, self.density_floor, self.checkpoint_every,
                          self.smoothing_mass, self.solver, self.tol)


@dataclass(frozen=True)
class FlowRecord:
    step: int
    objective: float
    total_mass: float
    min_rho: float
    max_rho: float
    cg_iters_state: int
    negativity_events: int  # nodes with rho < 0
    dissipation: float = float("nan")  # S_eta^T K(rho) S_eta, nan for the final state


class FlowHistory:
    """Per-step records; the record of step i describes rho_i."""

    CSV_COLUMNS = ("step", "objective", "total_mass", "log_rel_mass_error",
                   "min_rho", "max_rho", "cg_iters_state", "negativity_events")

    def __init__(self):
        self.records: List[FlowRecord] = []
        self.checkpoints: Dict[int, np.ndarray] = {}
        self.dissipation_violations = 0

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i) -> FlowRecord:
        return self.records[i]

    def append(self, record: FlowRecord):
        if self.records:
            prev, first = self.records[-1], self.records[0]
            if record.objective > prev.objective + DISSIPATION_TOL * abs(first.objective):
                self.dissipation_violations += 1
                log = logger.warning if self.dissipation_violations == 1 else logger.debug
                log(f"Flow: objective rose at step {record.step} "
                    f"({prev.objective:.6e} -> {record.objective:.6e})", log_to_file=False)
        self.records.append(record)

    @property
    def initial_mass(self) -> float:
        return self.records[0].total_mass

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    @property
    def negativity_events(self) -> int:
        return sum(r.negativity_events for r in self.records)

    def log_rel_mass_errors(self) -> np.ndarray:
        masses = np.array([r.total_mass for r in self.records])
        return np.log(masses / self.initial_mass)

    def max_mass_drift(self) -> float:
        return float(np.max(np.abs(self.log_rel_mass_errors()))) if self.records else 0.0

    def rows(self) -> List[list]:
        """history.csv rows in CSV_COLUMNS order."""
        errors = self.log_rel_mass_errors()
        return [[r.step, r.objective, r.total_mass, float(err), r.min_rho, r.max_rho,
                 r.cg_iters_state, r.negativity_events]
                for r, err in zip(self.records, errors)]


class FlowSolver:
    """Runs the flow for one problem, reusing factorized operators across steps."""

    def __init__(self, prob, params: FlowParams, progress_callback: Optional[Callable] = None):
        if prob.kind not in _PHYSICS:
            raise ValueError(f"Unknown problem kind {prob.kind!r}")
        self.prob = prob
        self.params = params
        self.mesh = prob.mesh
        self.progress_callback = progress_callback
        self._solve_state, self._sensitivity = _PHYSICS[prob.kind]
        self._smoother = Smoother(self.mesh, params.smoothing_mass)
        self._mass = SpdFactorization(fem.assemble_mass(self.mesh))
        self._sign = -1.0 if prob.kappa.sensitivity_scale < 0 else 1.0
        self.last_state = None

    def _notify_progress(self, stage, progress_percent=0, message="", error=None):
        if self.progress_callback:
            try:
                self.progress_callback(stage=stage, progress_percent=progress_percent,
                                       message=message, error=error)
            except Exception as e:
                logger.warning(f"Flow: progress callback error: {e}", log_to_file=False)

    def _check_density(self, rho) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        if rho.shape != (self.mesh.num_nodes,):
            raise ValueError(f"Density of shape {rho.shape} does not match {self.mesh.num_nodes} nodes")
        if not np.all(np.isfinite(rho)):
            raise ValueError("Density has non-finite values")
        return rho

    def evaluate(self, rho: np.ndarray, step: int):
        """Smoothed state of rho: (rho_tilde, state, record without dissipation)."""
        rho_tilde, _ = self._smoother.smooth(rho, self.params.delta)
        state = self._solve_state(self.prob, rho_tilde)
        self.last_state = state
        record = FlowRecord(step=step, objective=state.objective, total_mass=total_mass(self.mesh, rho),
                            min_rho=float(rho.min()), max_rho=float(rho.max()),
                            cg_iters_state=state.solve_report.iterations,
                            negativity_events=int(np.count_nonzero(rho < 0)))
        return rho_tilde, state, record

    def step(self, rho: np.ndarray, step: int = 0) -> Tuple[np.ndarray, FlowRecord]:
        """One update rho_i -> rho_{i+1}; the record describes rho_i."""
        p = self.params
        rho = self._check_density(rho)
        rho_tilde, state, record = self.evaluate(rho, step)

        s = self._sensitivity(self.prob, rho_tilde, state)
        s_delta, _ = self._smoother.smooth(s, p.delta)
        rho_bar, _ = self._smoother.smooth(rho, p.epsilon)
        s_eta, _ = filter_sensitivity(self.mesh, s_delta, np.maximum(rho_bar, 0.0), p.eta,
                                      tol=p.tol, solver=p.solver)

        K_rho = fem.assemble_stiffness(self.mesh, fem.element_average(self.mesh, rho), signed=True)
        flux = K_rho @ s_eta
        rhs = fem.assemble_mass(self.mesh) @ rho + self._sign * p.tau * flux
        rho_next, _ = self._mass.solve(rhs)

        dissipation = float(s_eta @ flux)
        logger.trace(f"Flow: step {step} J={record.objective:.6e} dissipation={dissipation:.3e}")
        if record.negativity_events:
            logger.debug(f"Flow: {record.negativity_events} negative nodal densities at step {step}")
        return rho_next, replace(record, dissipation=dissipation)

    def run(self, rho0: np.ndarray, keep_checkpoints: bool = False) -> Tuple[np.ndarray, FlowHistory]:
        p = self.params
        rho = self._check_density(rho0).copy()
        history = FlowHistory()
        self._notify_progress("flow", 0, f"Starting {p.steps} steps")
        try:
            for i in range(p.steps):
                if keep_checkpoints and i % p.checkpoint_every == 0:
                    history.checkpoints[i] = rho.copy()
                rho_next, record = self.step(rho, i)
                history.append(record)
                rho = rho_next
                if (i + 1) % p.checkpoint_every == 0:
                    self._notify_progress("flow", int(100 * (i + 1) / p.steps),
                                          f"Step {i + 1}/{p.steps} J={record.objective:.6e}")
            if keep_checkpoints:
                history.checkpoints[p.steps] = rho.copy()
            _, _, final = self.evaluate(rho, p.steps)
            history.append(final)
        except (SolverError, MaterialError, ValueError) as e:
            self._notify_progress("flow", 0, "Step failed", error=str(e))
            raise FlowError(f"Flow failed at step {len(history)}: {e}", history) from e

        logger.debug(f"Flow: finished {p.steps} steps, J {history[0].objective:.6e} -> "
                     f"{history[-1].objective:.6e}, mass drift {history.max_mass_drift():.2e}")
        if history.dissipation_violations:
            logger.warning(f"Flow: objective increased in {history.dissipation_violations} steps",
                           log_to_file=False)
        self._notify_progress("flow", 100, "Done")
        return rho, history


def flow_step(rho: np.ndarray, prob, params: FlowParams) -> Tuple[np.ndarray, FlowRecord]:
    return FlowSolver(prob, params).step(rho)


def run_flow(rho0: np.ndarray, prob, params: FlowParams,
             progress_callback: Optional[Callable] = None) -> Tuple[np.ndarray, FlowHistory]:
    return FlowSolver(prob, params, progress_callback).run(rho0)


@dataclass
class EtaOrderReport:
    etas: List[float]
    errors: List[float]
    slope: float
    intercept: float
    fitted: List[bool]  # whether each eta entered the fit
    metric: str = "linearized"
    exact_errors: List[float] = field(default_factory=list)  # nodal exact OT, for comparison

    CSV_COLUMNS = ("eta", "error", "fitted", "exact_error")

    def rows(self) -> List[list]:
        exact = self.exact_errors or [float("nan")] * len(self.etas)
        return [[eta, err, int(used), ex]
                for eta, err, used, ex in zip(self.etas, self.errors, self.fitted, exact)]


def fit_loglog(etas: Sequence[float], errors: Sequence[float]) -> Tuple[float, float, List[bool]]:
    """Least-squares slope and intercept of log E against log eta, zero errors excluded."""
    used = [e > 0 for e in errors]
    if sum(used) < MIN_FIT_POINTS:
        raise ValueError(f"Need at least {MIN_FIT_POINTS} points with E > 0 for the fit, got {sum(used)}")
    x = np.log([eta for eta, u in zip(etas, used) if u])
    y = np.log([err for err, u in zip(errors, used) if u])
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept), used


def verify_eta_order(prob, params_base: FlowParams, etas: Sequence[float], eta_ref: float,
                     steps: Optional[int] = None, coarsen: int = MAX_COARSE_SIDE,
                     metric: str = "linearized",
                     rho0: Optional[np.ndarray] = None,
                     progress_callback: Optional[Callable] = None) -> EtaOrderReport:
    """E(eta) = max over checkpoints of W2(rho^eta, rho^eta_ref), and the log-log slope of E.

    metric picks the W2 engine for E. Runs differ by less than a node spacing
    at small eta, where exact OT on the nodes grows like the square root of the
    displacement; "linearized" resolves sub-cell differences and is the
    default. The exact nodal distances are always recorded next to it.
    """
    if metric not in METHODS:
        raise ValueError(f"Unknown metric {metric!r}, expected one of {METHODS}")
    etas = [float(e) for e in etas]
    if len(etas) < MIN_FIT_POINTS:
        raise ValueError(f"Need at least {MIN_FIT_POINTS} etas, got {len(etas)}")
    if any(a <= b for a, b in zip(etas, etas[1:])):
        raise ValueError(f"etas must be strictly decreasing, got {etas}")
    if not eta_ref > 0:
        raise ValueError(f"eta_ref must be > 0, got {eta_ref}")
    if steps is not None:
        params_base = FlowParams(params_base.smoothing, params_base.tau, steps, params_base.density_floor,
                                 params_base.checkpoint_every, params_base.smoothing_mass,
                                 params_base.solver, params_base.tol)
    mesh = prob.mesh
    if rho0 is None:
        rho0 = np.ones(mesh.num_nodes)

    def notify(stage, percent, message):
        if progress_callback:
            try:
                progress_callback(stage=stage, progress_percent=percent, message=message, error=None)
            except Exception as e:
                logger.warning(f"Order: progress callback error: {e}", log_to_file=False)

    notify("reference", 0, f"Reference run at eta={eta_ref:.1e}")
    _, ref = FlowSolver(prob, params_base.with_eta(eta_ref)).run(rho0, keep_checkpoints=True)

    errors, exact_errors = [], []
    for k, eta in enumerate(etas):
        if eta == eta_ref:
            errors.append(0.0)
            exact_errors.append(0.0)
            continue
        notify("eta", int(100 * k / len(etas)), f"Run at eta={eta:.1e}")
        _, hist = FlowSolver(prob, params_base.with_eta(eta)).run(rho0, keep_checkpoints=True)
        pairs = [(hist.checkpoints[t], ref.checkpoints[t]) for t in sorted(ref.checkpoints)]
        errors.append(max(w2_between_densities(mesh, a, b, coarsen=coarsen, method=metric) for a, b in pairs))
        exact_errors.append(max(w2_between_densities(mesh, a, b, coarsen=coarsen) for a, b in pairs))
        logger.info(f"Order: eta={eta:.1e} E={errors[-1]:.6e} ({metric}), exact nodal {exact_errors[-1]:.6e}")

    slope, intercept, used = fit_loglog(etas, errors)
    logger.info(f"Order: fitted slope {slope:.3f} ({metric})")
    notify("fit", 100, f"slope {slope:.3f}")
    return EtaOrderReport(etas, errors, slope, intercept, used, metric, exact_errors)

"""Typed run configuration and the builders that turn it into numerical objects.

A RunConfig is read from a ConfigManager. Every value read goes through
ConfigManager.get so that the manager ends up holding the resolved
configuration, defaults included.
"""

from dataclasses import dataclass, replace
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from topt import fem
from topt.artifacts import read_density
from topt.coresys.manager_config import ConfigError, ConfigManager
from topt.flow import FlowParams
from topt.linsys import DEFAULT_TOL
from topt.material import DENSITY_FLOOR, VARIANT_ALIASES, VARIANTS, KappaParams, canonical_variant
from topt.mesh import Mesh, MeshError, boundary_spec_from_config, build_rect_mesh, tag_boundary
from topt.physics_elastic import ElasticProblem
from topt.physics_heat import HeatProblem
from topt.smoothing import MASS_MATRICES, SmoothingParams
from topt.transport import MAX_COARSE_SIDE, METHODS

KINDS = ("heat", "elastic")
SOLVERS = ("auto", "cg", "direct")

Load = Union[float, Tuple[float, float]]

# Per-kind defaults: the conduction and elasticity benchmark setups.
_DEFAULTS = {
    "heat": {
        "DOMAIN": {"LX": 1.0, "LY": 1.0, "NX": 64, "NY": 64},
        "BOUNDARY": {"SEGMENTS": [{"EDGE": "left", "START": 0.44, "END": 0.56, "TAG": "Gamma0"}]},
        "MATERIAL": {"A": 1.3},
        "SOURCES": {"F": 0.5, "G": 0.0},
        "FLOW": {"TAU": 1e-3},
        "INITIAL": {"RHO0": 1.0},
    },
    "elastic": {
        "DOMAIN": {"LX": 2.0, "LY": 1.0, "NX": 128, "NY": 64},
        "BOUNDARY": {"SEGMENTS": [{"EDGE": "left", "START": 0.0, "END": 1.0, "TAG": "Gamma0"},
                                  {"EDGE": "right", "START": 0.44, "END": 0.56, "TAG": "Gamma1"}]},
        "MATERIAL": {"A": 2.0},
        "SOURCES": {"F": [0.0, 0.0], "G": [0.0, -1.0]},
        "FLOW": {"TAU": 3e-3},
        "INITIAL": {"RHO0": 2.0},
    },
}


def _require(ok: bool, field: str, message: str):
    if not ok:
        raise ConfigError(message, field=field)


def _number(cm: ConfigManager, section: str, key: str, default=None, positive=False, nonneg=False) -> float:
    value = cm.get(section, key, default)
    field = f"{section}.{key}"
    _require(isinstance(value, (int, float)) and not isinstance(value, bool), field,
             f"Expected a number, got {value!r}")
    if positive:
        _require(value > 0, field, f"Must be > 0, got {value}")
    if nonneg:
        _require(value >= 0, field, f"Must be >= 0, got {value}")
    return float(value)


def _integer(cm: ConfigManager, section: str, key: str, default=None, minimum=0) -> int:
    value = cm.get(section, key, default)
    field = f"{section}.{key}"
    _require(isinstance(value, int) and not isinstance(value, bool), field, f"Expected an integer, got {value!r}")
    _require(value >= minimum, field, f"Must be >= {minimum}, got {value}")
    return int(value)


def _choice(cm: ConfigManager, section: str, key: str, choices, default) -> str:
    value = cm.get(section, key, default)
    _require(value in choices, f"{section}.{key}", f"Must be one of {choices}, got {value!r}")
    return value


def _numbers(cm: ConfigManager, section: str, key: str, default) -> Tuple[float, ...]:
    value = cm.get(section, key, default)
    field = f"{section}.{key}"
    _require(isinstance(value, list) and len(value) > 0, field, f"Expected a nonempty list, got {value!r}")
    _require(all(isinstance(v, (int, float)) and v > 0 for v in value), field, f"Entries must be > 0, got {value}")
    return tuple(float(v) for v in value)


def _load(cm: ConfigManager, section: str, key: str, default, kind: str) -> Load:
    value = cm.get(section, key, default)
    field = f"{section}.{key}"
    if kind == "heat":
        _require(isinstance(value, (int, float)), field, f"Heat loads are scalars, got {value!r}")
        return float(value)
    _require(isinstance(value, list) and len(value) == 2 and all(isinstance(v, (int, float)) for v in value),
             field, f"Elastic loads are 2-lists, got {value!r}")
    return (float(value[0]), float(value[1]))


@dataclass(frozen=True)
class DomainConfig:
    lx: float
    ly: float
    nx: int
    ny: int


@dataclass(frozen=True)
class MaterialConfig:
    a: float
    p: float
    variant: str
    sensitivity_scale: float
    lambda1: float
    lambda2: float
    override: Optional[float] = None


@dataclass(frozen=True)
class FlowConfig:
    delta: float
    epsilon: float
    eta: float
    tau: float
    steps: int
    checkpoint_every: int
    density_floor: float
    smoothing_mass: str
    solver: str
    tol: float


@dataclass(frozen=True)
class SweepConfig:
    deltas: Tuple[float, ...]
    etas: Tuple[float, ...]
    tau_map: Tuple[Tuple[float, float, float], ...]  # (delta, eta, tau)
    jobs: int

    def tau_for(self, delta: float, eta: float, default: float) -> float:
        for d, e, tau in self.tau_map:
            if np.isclose(d, delta, rtol=1e-9, atol=0) and np.isclose(e, eta, rtol=1e-9, atol=0):
                return tau
        return default


@dataclass(frozen=True)
class OrderConfig:
    etas: Tuple[float, ...]
    eta_ref: float
    coarsen: int
    metric: str = "linearized"


@dataclass(frozen=True)
class InitialConfig:
    rho0: float
    file: Optional[str] = None
    perturbation: float = 0.0


@dataclass(frozen=True)
class RunConfig:
    kind: str
    domain: DomainConfig
    segments: Tuple[Tuple[str, float, float, str], ...]  # (edge, start, end, tag)
    material: MaterialConfig
    f: Load
    g: Load
    flow: FlowConfig
    sweep: SweepConfig
    order: OrderConfig
    initial: InitialConfig
    seed: int
    output: str

    @classmethod
    def from_manager(cls, cm: ConfigManager) -> "RunConfig":
        kind = _choice(cm, "PROBLEM", "KIND", KINDS, "heat")
        d = _DEFAULTS[kind]

        domain = DomainConfig(
            lx=_number(cm, "DOMAIN", "LX", d["DOMAIN"]["LX"], positive=True),
            ly=_number(cm, "DOMAIN", "LY", d["DOMAIN"]["LY"], positive=True),
            nx=_integer(cm, "DOMAIN", "NX", d["DOMAIN"]["NX"], minimum=1),
            ny=_integer(cm, "DOMAIN", "NY", d["DOMAIN"]["NY"], minimum=1),
        )

        raw_segments = cm.get("BOUNDARY", "SEGMENTS", d["BOUNDARY"]["SEGMENTS"])
        _require(isinstance(raw_segments, list), "BOUNDARY.SEGMENTS", "Expected a list of segments")
        try:
            spec = boundary_spec_from_config(raw_segments)
            spec.validate(domain.lx, domain.ly)
        except (MeshError, TypeError, ValueError) as e:
            raise ConfigError(str(e), field="BOUNDARY.SEGMENTS") from e
        segments = tuple((s["EDGE"], float(s["START"]), float(s["END"]), s["TAG"]) for s in raw_segments)

        override = cm.get("MATERIAL", "OVERRIDE") if cm.has("MATERIAL", "OVERRIDE") else None
        _require(override is None or (isinstance(override, (int, float)) and override > 0),
                 "MATERIAL.OVERRIDE", f"Must be null or > 0, got {override!r}")
        material = MaterialConfig(
            a=_number(cm, "MATERIAL", "A", d["MATERIAL"]["A"], positive=True),
            p=_number(cm, "MATERIAL", "P", 3.0, positive=True),
            variant=canonical_variant(
                _choice(cm, "MATERIAL", "VARIANT", VARIANTS + tuple(VARIANT_ALIASES), "reciprocal")),
            sensitivity_scale=_number(cm, "MATERIAL", "SENSITIVITY_SCALE", -0.5),
            lambda1=_number(cm, "MATERIAL", "LAMBDA1", 15.0 / 26.0, positive=True),
            lambda2=_number(cm, "MATERIAL", "LAMBDA2", 5.0 / 13.0, positive=True),
            override=None if override is None else float(override),
        )
        _require(material.sensitivity_scale != 0, "MATERIAL.SENSITIVITY_SCALE", "Must be nonzero")

        f = _load(cm, "SOURCES", "F", d["SOURCES"]["F"], kind)
        g = _load(cm, "SOURCES", "G", d["SOURCES"]["G"], kind)

        flow = FlowConfig(
            delta=_number(cm, "FLOW", "DELTA", 1e-2, nonneg=True),
            epsilon=_number(cm, "FLOW", "EPSILON", 1e-7, nonneg=True),
            eta=_number(cm, "FLOW", "ETA", 1e-2, nonneg=True),
            tau=_number(cm, "FLOW", "TAU", d["FLOW"]["TAU"], positive=True),
            steps=_integer(cm, "FLOW", "STEPS", 500),
            checkpoint_every=_integer(cm, "FLOW", "CHECKPOINT_EVERY", 10, minimum=1),
            density_floor=_number(cm, "FLOW", "DENSITY_FLOOR", DENSITY_FLOOR, positive=True),
            smoothing_mass=_choice(cm, "FLOW", "SMOOTHING_MASS", MASS_MATRICES, "lumped"),
            solver=_choice(cm, "FLOW", "SOLVER", SOLVERS, "auto"),
            tol=_number(cm, "FLOW", "TOL", DEFAULT_TOL, positive=True),
        )

        raw_map = cm.get("SWEEP", "TAU_MAP", [])
        _require(isinstance(raw_map, list), "SWEEP.TAU_MAP", "Expected a list of {DELTA, ETA, TAU}")
        try:
            tau_map = tuple((float(e["DELTA"]), float(e["ETA"]), float(e["TAU"])) for e in raw_map)
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"Bad entry: {e}", field="SWEEP.TAU_MAP") from e
        _require(all(t > 0 for _, _, t in tau_map), "SWEEP.TAU_MAP", "tau entries must be > 0")
        sweep = SweepConfig(
            deltas=_numbers(cm, "SWEEP", "DELTAS", [flow.delta]),
            etas=_numbers(cm, "SWEEP", "ETAS", [flow.eta]),
            tau_map=tau_map,
            jobs=_integer(cm, "SWEEP", "JOBS", 1, minimum=1),
        )

        order = OrderConfig(
            etas=_numbers(cm, "ORDER", "ETAS", [1e-2, 1e-3, 1e-4]),
            eta_ref=_number(cm, "ORDER", "ETA_REF", 1e-6, positive=True),
            coarsen=_integer(cm, "ORDER", "COARSEN", MAX_COARSE_SIDE, minimum=1),
            metric=_choice(cm, "ORDER", "METRIC", METHODS, "linearized"),
        )

        file = cm.get("INITIAL", "FILE") if cm.has("INITIAL", "FILE") else None
        _require(file is None or isinstance(file, str), "INITIAL.FILE", f"Expected a path, got {file!r}")
        initial = InitialConfig(
            rho0=_number(cm, "INITIAL", "RHO0", d["INITIAL"]["RHO0"], positive=True),
            file=file,
            perturbation=_number(cm, "INITIAL", "PERTURBATION", 0.0, nonneg=True),
        )
        _require(initial.perturbation < 0.5, "INITIAL.PERTURBATION", "Must be < 0.5 to keep rho0 positive")

        return cls(kind=kind, domain=domain, segments=segments, material=material, f=f, g=g,
                   flow=flow, sweep=sweep, order=order, initial=initial,
                   seed=_integer(cm, "RUN", "SEED", 0),
                   output=str(cm.get("RUN", "OUTPUT", "out")))

    @classmethod
    def from_dict(cls, data: Dict[str, Dict[str, Any]]) -> "RunConfig":
        return cls.from_manager(ConfigManager(data=data))

    @classmethod
    def from_file(cls, path: str) -> Tuple["RunConfig", ConfigManager]:
        cm = ConfigManager(path)
        return cls.from_manager(cm), cm

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        def load(v):
            return list(v) if isinstance(v, tuple) else v

        m, fl = self.material, self.flow
        out = {
            "PROBLEM": {"KIND": self.kind},
            "DOMAIN": {"LX": self.domain.lx, "LY": self.domain.ly, "NX": self.domain.nx, "NY": self.domain.ny},
            "BOUNDARY": {"SEGMENTS": [{"EDGE": e, "START": s, "END": t, "TAG": tag}
                                      for e, s, t, tag in self.segments]},
            "MATERIAL": {"A": m.a, "P": m.p, "VARIANT": m.variant, "SENSITIVITY_SCALE": m.sensitivity_scale,
                         "LAMBDA1": m.lambda1, "LAMBDA2": m.lambda2},
            "SOURCES": {"F": load(self.f), "G": load(self.g)},
            "FLOW": {"DELTA": fl.delta, "EPSILON": fl.epsilon, "ETA": fl.eta, "TAU": fl.tau, "STEPS": fl.steps,
                     "CHECKPOINT_EVERY": fl.checkpoint_every, "DENSITY_FLOOR": fl.density_floor,
                     "SMOOTHING_MASS": fl.smoothing_mass, "SOLVER": fl.solver, "TOL": fl.tol},
            "SWEEP": {"DELTAS": list(self.sweep.deltas), "ETAS": list(self.sweep.etas),
                      "TAU_MAP": [{"DELTA": d, "ETA": e, "TAU": t} for d, e, t in self.sweep.tau_map],
                      "JOBS": self.sweep.jobs},
            "ORDER": {"ETAS": list(self.order.etas), "ETA_REF": self.order.eta_ref, "COARSEN": self.order.coarsen,
                      "METRIC": self.order.metric},
            "INITIAL": {"RHO0": self.initial.rho0, "PERTURBATION": self.initial.perturbation},
            "RUN": {"SEED": self.seed, "OUTPUT": self.output},
        }
        if m.override is not None:
            out["MATERIAL"]["OVERRIDE"] = m.override
        if self.initial.file is not None:
            out["INITIAL"]["FILE"] = self.initial.file
        return out

    def with_pair(self, delta: float, eta: float) -> "RunConfig":
        """This config at one (delta, eta) sweep pair, tau taken from the tau map."""
        tau = self.sweep.tau_for(delta, eta, self.flow.tau)
        flow = replace(self.flow, delta=delta, eta=eta, tau=tau)
        sweep = replace(self.sweep, deltas=(delta,), etas=(eta,))
        return replace(self, flow=flow, sweep=sweep)

    # --- builders ---

    def build_mesh(self) -> Mesh:
        spec = boundary_spec_from_config([{"EDGE": e, "START": s, "END": t, "TAG": tag}
                                          for e, s, t, tag in self.segments])
        d = self.domain
        return tag_boundary(build_rect_mesh(d.lx, d.ly, d.nx, d.ny), spec)

    def kappa_params(self) -> KappaParams:
        m = self.material
        return KappaParams(a=m.a, p=m.p, variant=m.variant, sensitivity_scale=m.sensitivity_scale,
                           override=m.override)

    def build_problem(self, mesh: Optional[Mesh] = None):
        mesh = mesh if mesh is not None else self.build_mesh()
        common = dict(mesh=mesh, kappa=self.kappa_params(), f=self.f, g=self.g,
                      density_floor=self.flow.density_floor, solver=self.flow.solver, tol=self.flow.tol)
        try:
            if self.kind == "heat":
                return HeatProblem(**common)
            return ElasticProblem(lambda1=self.material.lambda1, lambda2=self.material.lambda2, **common)
        except ValueError as e:
            raise ConfigError(str(e), field="BOUNDARY.SEGMENTS") from e

    def flow_params(self) -> FlowParams:
        fl = self.flow
        return FlowParams(
            smoothing=SmoothingParams(fl.delta, fl.epsilon, fl.eta),
            tau=fl.tau, steps=fl.steps, density_floor=fl.density_floor,
            checkpoint_every=fl.checkpoint_every, smoothing_mass=fl.smoothing_mass, tol=fl.tol,
        )

    def initial_density(self, mesh: Mesh) -> np.ndarray:
        """rho0 from INITIAL.FILE, or a constant with an optional mass-neutral seeded perturbation."""
        init = self.initial
        if init.file is not None:
            file_mesh, rho = read_density(init.file)
            if not file_mesh.same_geometry(mesh):
                raise ConfigError(f"Density file mesh {file_mesh.nx}x{file_mesh.ny} does not match "
                                  f"the configured {mesh.nx}x{mesh.ny} domain", field="INITIAL.FILE")
            return rho
        rho = np.full(mesh.num_nodes, init.rho0)
        if init.perturbation > 0:
            rng = np.random.default_rng(self.seed)
            noise = init.rho0 * init.perturbation * rng.uniform(-1.0, 1.0, mesh.num_nodes)
            lumped = fem.lumped_mass(mesh)
            rho += noise - (lumped @ noise) / lumped.sum()
        return rho

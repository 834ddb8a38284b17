"""Density-to-coefficient interpolation kappa and its derivative."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

VARIANTS = ("reciprocal", "saturating")
# Accepted spellings for a variant name.
VARIANT_ALIASES = {"paper": "reciprocal"}
DENSITY_FLOOR = 1e-9


class MaterialError(ValueError):
    """Invalid interpolation parameters or a density outside the domain of kappa."""


@dataclass(frozen=True)
class KappaParams:
    """Interpolation kappa(s) = (1 - exp(-a s))^(-p) ("reciprocal") or ^(+p) ("saturating").

    sensitivity_scale multiplies kappa'(rho) * energy density in the sensitivity
    field; -0.5 is the discrete derivative of J, +1 the literal formula.
    override fixes kappa to a constant (kappa' = 0).
    """
    a: float = 1.3
    p: float = 3.0
    variant: str = "reciprocal"
    sensitivity_scale: float = -0.5
    override: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "variant", canonical_variant(self.variant))
        if not self.a > 0:
            raise MaterialError(f"kappa parameter a must be > 0, got {self.a}")
        if not self.p > 0:
            raise MaterialError(f"kappa exponent p must be > 0, got {self.p}")
        if self.variant not in VARIANTS:
            raise MaterialError(f"Unknown kappa variant {self.variant!r}, expected one of {VARIANTS}")
        if self.sensitivity_scale == 0:
            raise MaterialError("sensitivity_scale must be nonzero")
        if self.override is not None and not self.override > 0:
            raise MaterialError(f"kappa override must be > 0, got {self.override}")


def canonical_variant(name: str) -> str:
    return VARIANT_ALIASES.get(name, name)


def _check_domain(s: np.ndarray, params: KappaParams):
    if params.variant == "reciprocal" and np.any(s <= 0):
        raise MaterialError(f"kappa is undefined for densities <= 0 (min {np.min(s):.3e}); clamp first")


def kappa(s, params: KappaParams):
    s = np.asarray(s, dtype=float)
    if params.override is not None:
        return np.full_like(s, params.override)
    _check_domain(s, params)
    base = -np.expm1(-params.a * s)  # 1 - exp(-a s)
    sign = -1.0 if params.variant == "reciprocal" else 1.0
    return base ** (sign * params.p)


def kappa_prime(s, params: KappaParams):
    s = np.asarray(s, dtype=float)
    if params.override is not None:
        return np.zeros_like(s)
    _check_domain(s, params)
    e = np.exp(-params.a * s)
    base = -np.expm1(-params.a * s)
    if params.variant == "reciprocal":
        return -params.p * params.a * e * base ** (-params.p - 1.0)
    return params.p * params.a * e * base ** (params.p - 1.0)


def clamp_density(rho, floor: float = DENSITY_FLOOR):
    """Densities below floor raised to floor, for kappa evaluation only."""
    return np.maximum(np.asarray(rho, dtype=float), floor)

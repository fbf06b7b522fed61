"""Physical constants, unit conversion and the small amount of uncertainty
algebra the rest of the package needs."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

# CODATA 2018
VACUUM_PERMITTIVITY = 8.8541878128e-12  # F/m
REDUCED_PLANCK = 1.054571817e-34  # J s
PLANCK = 6.62607015e-34  # J s
BOLTZMANN = 1.380649e-23  # J/K
ATOMIC_MASS_UNIT = 1.66053906660e-27  # kg
BOHR_RADIUS = 5.29177210903e-11  # m

# 7Li D2 line (vacuum); the Bragg lasers sit a few GHz off this line
LI7_D2_WAVELENGTH = 670.7764e-9  # m


@dataclass(frozen=True)
class PhysicalConstants:
    vacuum_permittivity: float = VACUUM_PERMITTIVITY
    reduced_planck: float = REDUCED_PLANCK
    planck: float = PLANCK
    boltzmann: float = BOLTZMANN
    atomic_mass_unit: float = ATOMIC_MASS_UNIT
    bohr_radius_cubed: float = BOHR_RADIUS**3
    li7_mass: float = 7.0160034366 * ATOMIC_MASS_UNIT
    li6_mass: float = 6.0151228874 * ATOMIC_MASS_UNIT
    ar_mass: float = 39.948 * ATOMIC_MASS_UNIT
    laser_wavelength: float = LI7_D2_WAVELENGTH

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"constant {name} must be positive and finite, got {value}")

    def with_overrides(self, **kwargs) -> "PhysicalConstants":
        """Copy with the configurable entries (wavelength, masses) replaced."""
        allowed = {"laser_wavelength", "li7_mass", "li6_mass", "ar_mass"}
        bad = set(kwargs) - allowed
        if bad:
            raise ValueError(f"constants not configurable: {sorted(bad)}")
        return replace(self, **kwargs)

    def mass(self, species: str) -> float:
        key = {"li7": "li7_mass", "7li": "li7_mass", "li6": "li6_mass", "6li": "li6_mass",
               "ar": "ar_mass", "argon": "ar_mass"}.get(species.lower())
        if key is None:
            raise ValueError(f"unknown species {species!r}")
        return getattr(self, key)


CONSTANTS = PhysicalConstants()


@dataclass(frozen=True)
class Measurement:
    """A value with its 1-sigma uncertainty."""

    value: float
    sigma: float = 0.0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")

    @property
    def relative(self) -> float:
        if self.value == 0:
            raise ZeroDivisionError("relative uncertainty undefined for a zero value")
        return self.sigma / abs(self.value)

    def scaled(self, factor: float) -> "Measurement":
        return Measurement(self.value * factor, self.sigma * abs(factor))

    def to_dict(self) -> dict:
        return {"value": self.value, "sigma": self.sigma}

    def __str__(self):
        return f"{self.value:.6g} +/- {self.sigma:.2g}"


def to_atomic_units(alpha, constants: PhysicalConstants = CONSTANTS):
    """Polarizability volume in m^3 -> atomic units (Bohr radius cubed)."""
    return alpha / constants.bohr_radius_cubed


def quadrature_sum(relative_uncertainties: Iterable[float]) -> float:
    values = [float(u) for u in relative_uncertainties]
    if not values:
        raise ValueError("no components")
    if any(u < 0 for u in values):
        raise ValueError("uncertainty components must be non-negative")
    return math.sqrt(math.fsum(u * u for u in values))


def inverse_variance_mean(estimates: Sequence[Measurement]) -> Measurement:
    if not estimates:
        raise ValueError("no estimates to combine")
    if any(m.sigma <= 0 for m in estimates):
        raise ValueError("inverse-variance weighting needs every sigma > 0")
    weights = [1.0 / m.sigma**2 for m in estimates]
    total = math.fsum(weights)
    value = math.fsum(w * m.value for w, m in zip(weights, estimates)) / total
    return Measurement(value, 1.0 / math.sqrt(total))

"""Independent determinations of the most probable beam velocity u.

Two are measurements (Bragg-angle kinematics and a Doppler shift for a beam
almost counter-propagating with the atoms).  The third is the supersonic
expansion prediction from the nozzle temperature, with small corrections for
the finite argon speed ratio, the lithium admixture and velocity slip.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .core import CONSTANTS, Measurement, PhysicalConstants, inverse_variance_mean


@dataclass(frozen=True)
class SourceConditions:
    """Oven/nozzle state of the seeded argon beam.

    Parameters
    ----------
    nozzle_temperature : Measurement
        T0 in K.
    carrier_pressure, seed_pressure : float
        Argon and lithium partial pressures (any common unit, only their ratio
        matters).
    argon_speed_ratio : float
        Parallel speed ratio of the argon carrier; ``math.inf`` disables the
        finite-speed-ratio correction.
    slip_fraction : float
        Relative velocity excess of lithium over argon.
    mixture_fraction : float, optional
        Override for the mean-mass correction; by default it is computed from
        the mole-fraction-weighted mass.
    seed_species : str
        Species seeded in the carrier, used for the mean mass.
    """

    nozzle_temperature: Measurement = Measurement(1073.0, 11.0)
    carrier_pressure: float = 167.0
    seed_pressure: float = 0.86
    argon_speed_ratio: float = 8.3
    slip_fraction: float = 0.0242
    mixture_fraction: Optional[float] = None
    seed_species: str = "li7"

    def __post_init__(self):
        if not self.nozzle_temperature.value > 0:
            raise ValueError("nozzle temperature must be positive")
        if not self.carrier_pressure > 0:
            raise ValueError("carrier pressure must be positive")
        if not self.seed_pressure >= 0:
            raise ValueError("seed pressure must be non-negative")
        if not self.argon_speed_ratio > 1:
            raise ValueError("argon speed ratio must exceed 1")

    @classmethod
    def pure_argon(cls, nozzle_temperature=Measurement(1073.0, 11.0)):
        """No admixture, infinite speed ratio, no slip: the bare sqrt(5 k T0 / m) law."""
        return cls(nozzle_temperature, seed_pressure=0.0, argon_speed_ratio=math.inf,
                   slip_fraction=0.0, mixture_fraction=0.0)

    @classmethod
    def from_dict(cls, d: dict) -> "SourceConditions":
        d = dict(d)
        t0 = d.pop("nozzle_temperature_K", 1073.0)
        st0 = d.pop("nozzle_temperature_sigma_K", 11.0)
        return cls(Measurement(float(t0), float(st0)), **d)

    def to_dict(self) -> dict:
        return {"nozzle_temperature_K": self.nozzle_temperature.value,
                "nozzle_temperature_sigma_K": self.nozzle_temperature.sigma,
                "carrier_pressure": self.carrier_pressure, "seed_pressure": self.seed_pressure,
                "argon_speed_ratio": self.argon_speed_ratio, "slip_fraction": self.slip_fraction,
                "mixture_fraction": self.mixture_fraction, "seed_species": self.seed_species}


def bragg_velocity(theta_b: Measurement, wavelength=None, mass=None,
                   constants: PhysicalConstants = CONSTANTS) -> Measurement:
    """u = h / (m theta_B lambda_L), sigma propagated from theta_B."""
    wavelength = constants.laser_wavelength if wavelength is None else wavelength
    mass = constants.mass("li7") if mass is None else mass
    if not theta_b.value > 0:
        raise ValueError("Bragg angle must be positive")
    u = constants.planck / (mass * theta_b.value * wavelength)
    return Measurement(u, u * theta_b.relative)


def bragg_angle(u, wavelength=None, mass=None, constants: PhysicalConstants = CONSTANTS):
    """Inverse of :func:`bragg_velocity` (rad)."""
    wavelength = constants.laser_wavelength if wavelength is None else wavelength
    mass = constants.mass("li7") if mass is None else mass
    return constants.planck / (mass * u * wavelength)


def doppler_velocity(frequency_shift: Measurement, wavelength=None,
                     constants: PhysicalConstants = CONSTANTS) -> Measurement:
    """u = delta_nu * lambda for a counter-propagating probe."""
    wavelength = constants.laser_wavelength if wavelength is None else wavelength
    if frequency_shift.value < 0:
        raise ValueError("frequency shift must be non-negative")
    return frequency_shift.scaled(wavelength)


def mixture_correction(src: SourceConditions, constants: PhysicalConstants = CONSTANTS):
    """Relative velocity change from replacing m_Ar by the mole-weighted mean mass."""
    if src.mixture_fraction is not None:
        return src.mixture_fraction
    x = src.seed_pressure / (src.carrier_pressure + src.seed_pressure)
    m_ar = constants.mass("ar")
    m_mean = x * constants.mass(src.seed_species) + (1.0 - x) * m_ar
    return math.sqrt(m_ar / m_mean) - 1.0


def speed_ratio_correction(src: SourceConditions):
    """Relative velocity reduction 0.75 / S_Ar^2 (zero for an infinite ratio)."""
    return 0.75 / src.argon_speed_ratio**2


def supersonic_prediction(src: SourceConditions,
                          constants: PhysicalConstants = CONSTANTS) -> Measurement:
    """Most probable velocity from sqrt(5 k_B T0 / m_Ar) plus small corrections.

    The three corrections are of order 1% and are summed, ``1 - 0.75/S^2 +
    mixture + slip``.  The uncertainty comes from T0 alone: half its relative
    error.
    """
    t0 = src.nozzle_temperature
    base = math.sqrt(5.0 * constants.boltzmann * t0.value / constants.mass("ar"))
    factor = 1.0 - speed_ratio_correction(src) + mixture_correction(src, constants) + src.slip_fraction
    u = base * factor
    return Measurement(u, 0.5 * u * t0.sigma / t0.value)


def combine(estimates: Sequence[Measurement]) -> Measurement:
    """Inverse-variance weighted mean of independent velocity measurements."""
    return inverse_variance_mean(list(estimates))

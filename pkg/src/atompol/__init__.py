"""Electric polarizability of lithium from a separated-arm atom interferometer.

Modules
-------
capfield
    Analytic field and effective length of the septum capacitor.
laplace_oracle
    Finite-difference cross-check of the capacitor field.
beam
    Velocity averaging of the interferometer fringes.
fringes
    Fringe recordings: synthesis, fits and the bracketed phase-shift estimator.
polfit
    Fit of phi_m / V0^2 and the parallel speed ratio.
velocimetry
    Beam velocity measurements and the supersonic-expansion prediction.
pipeline
    Configuration, the polarizability chain and end-to-end runs.
"""
from .core import CONSTANTS, Measurement, PhysicalConstants

__version__ = "0.1.0"

__all__ = ["CONSTANTS", "Measurement", "PhysicalConstants", "__version__"]

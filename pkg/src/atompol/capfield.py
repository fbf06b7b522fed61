"""Analytic electrostatics of the septum capacitor with in-plane guard electrodes.

Only the half capacitor between the grounded septum (x = 0) and the electrode
plane (x = h) carries field.  The electrode plane is at V0 on |z| < a and
grounded outside, with a narrow insulating gap at each end across which the
potential ramps smoothly.  The septum field is the convolution of that
boundary profile with a sech^2 kernel normalized so that a uniform boundary
V0 gives the plane-capacitor field V0/h.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


@dataclass(frozen=True)
class CapacitorGeometry:
    """Geometry of the half capacitor actually used.

    ``half_length`` is ``a``; the full length ``2a`` already includes one mean
    gap width.  Spacing follows ``h(z) = h0 + h1 * z / a``.  All lengths in m.
    """

    half_length: float
    mean_spacing: float
    spacing_tilt: float = 0.0
    gap_width: float = 100e-6
    septum_offset: float = 50e-6
    half_length_sigma: float = 0.0
    spacing_sigma: float = 0.0

    def __post_init__(self):
        a, h0 = self.half_length, self.mean_spacing
        if not h0 > 0:
            raise ValueError("mean_spacing must be positive")
        if not a > 0:
            raise ValueError("half_length must be positive")
        if abs(self.spacing_tilt) / h0 >= 0.1:
            raise ValueError("|spacing_tilt| / mean_spacing must stay below 0.1")
        if self.gap_width < 0 or self.gap_width >= 0.1 * a:
            raise ValueError("gap_width must satisfy 0 <= gap_width << half_length")
        if not 0 <= self.septum_offset < h0:
            raise ValueError("septum_offset must lie in [0, mean_spacing)")
        if self.half_length_sigma < 0 or self.spacing_sigma < 0:
            raise ValueError("geometry uncertainties must be non-negative")

    @property
    def aspect(self) -> float:
        return self.half_length / self.mean_spacing

    @property
    def tilt_factor(self) -> float:
        """Common thickness-average factor 1 + h1^2/h0^2."""
        return 1.0 + (self.spacing_tilt / self.mean_spacing) ** 2


@dataclass(frozen=True)
class FieldProfile:
    z: np.ndarray
    field: np.ndarray
    potential: float

    def __post_init__(self):
        if np.any(np.diff(self.z) <= 0):
            raise ValueError("z samples must be strictly increasing")

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            fh.write(f"# V0={self.potential!r}\n")
            writer = csv.writer(fh)
            writer.writerow(["z_m", "E_V_per_m"])
            for zi, ei in zip(self.z, self.field):
                writer.writerow([repr(float(zi)), repr(float(ei))])
        return path


def _sech(x):
    e = np.exp(-np.abs(x))
    return 2.0 * e / (1.0 + e * e)


def kernel(z, h):
    """Septum-field kernel ``(pi / 4h^2) sech^2(pi z / 2h)``; integrates to 1/h."""
    if not h > 0:
        raise ValueError("spacing h must be positive")
    return np.pi / (4.0 * h * h) * _sech(np.pi * np.asarray(z, dtype=float) / (2.0 * h)) ** 2


def kernel_primitive(z, h):
    """Antiderivative of :func:`kernel` vanishing at z = 0."""
    return np.tanh(np.pi * np.asarray(z, dtype=float) / (2.0 * h)) / (2.0 * h)


def kernel_fwhm(h):
    return 4.0 * h / np.pi * math.acosh(math.sqrt(2.0))


_RAMPS = {
    # derivative of the normalized ramp profile p(t), t in [0, 1]
    "linear": lambda t: np.ones_like(t),
    "smoothstep": lambda t: 6.0 * t * (1.0 - t),
}


def boundary_potential(geometry: CapacitorGeometry, V0, z, ramp="linear"):
    """Potential on the electrode plane x = h, including the gap ramps."""
    z = np.asarray(z, dtype=float)
    a, w = geometry.half_length, geometry.gap_width
    if w == 0:
        return np.where(np.abs(z) < a, V0, np.where(np.abs(z) == a, 0.5 * V0, 0.0))
    t = np.clip((a + 0.5 * w - np.abs(z)) / w, 0.0, 1.0)
    if ramp == "linear":
        p = t
    elif ramp == "smoothstep":
        p = t * t * (3.0 - 2.0 * t)
    else:
        raise ValueError(f"unknown ramp {ramp!r}")
    return V0 * p


def field_on_septum(geometry: CapacitorGeometry, V0, z, ramp="linear"):
    """E_x on the septum surface at positions ``z`` (V/m).

    Integrating the convolution by parts moves the derivative onto the
    boundary profile, which is non-zero only inside the two gaps; each gap is
    then integrated with Gauss-Legendre against the kernel primitive.  For a
    linear or smoothstep ramp this is exact to round-off.
    """
    z = np.asarray(z, dtype=float)
    a, h, w = geometry.half_length, geometry.mean_spacing, geometry.gap_width
    if w == 0:
        return V0 * (kernel_primitive(z + a, h) - kernel_primitive(z - a, h))
    try:
        dp = _RAMPS[ramp]
    except KeyError:
        raise ValueError(f"unknown ramp {ramp!r}") from None
    t = 0.5 * (_GL_NODES + 1.0)
    wt = 0.5 * _GL_WEIGHTS * dp(t)
    # left gap: potential rises 0 -> V0 over [-a - w/2, -a + w/2]
    z_left = -a - 0.5 * w + w * t
    z_right = a + 0.5 * w - w * t
    zz = z[..., None]
    rise = (wt * kernel_primitive(zz - z_left, h)).sum(axis=-1)
    fall = (wt * kernel_primitive(zz - z_right, h)).sum(axis=-1)
    return V0 * (rise - fall)


def field_profile(geometry: CapacitorGeometry, V0, z=None, ramp="linear") -> FieldProfile:
    if z is None:
        a, h = geometry.half_length, geometry.mean_spacing
        z = np.linspace(-a - 10 * h, a + 10 * h, 2001)
    z = np.asarray(z, dtype=float)
    return FieldProfile(z=z, field=field_on_septum(geometry, V0, z, ramp), potential=float(V0))


def effective_length(geometry: CapacitorGeometry, mode="exact"):
    a, h = geometry.half_length, geometry.mean_spacing
    if mode == "exact":
        return 2.0 * a * (1.0 / math.tanh(math.pi * a / h) - h / (math.pi * a))
    if mode == "approx":
        return 2.0 * a - 2.0 * h / math.pi
    raise ValueError(f"mode must be 'exact' or 'approx', got {mode!r}")


def effective_length_offset(geometry: CapacitorGeometry, x=None, exact=False):
    """Effective length along the line at distance ``x`` from the septum.

    Adds the leading x^2 term to the approximate length.  With ``exact=True``
    the exponentially small end corrections are kept in both pieces.
    """
    a, h = geometry.half_length, geometry.mean_spacing
    x = geometry.septum_offset if x is None else x
    if not 0 <= x < h:
        raise ValueError("x must lie in [0, h0)")
    if not exact:
        return effective_length(geometry, "approx") + 2.0 * math.pi * x * x / (3.0 * h)
    q = math.pi * a / h
    tail = (q / math.tanh(q) - 1.0) / math.sinh(q) ** 2 if q < 350 else 0.0
    return effective_length(geometry, "exact") + math.pi * x * x / h * (2.0 / 3.0 - 2.0 * tail)


def e2_septum_exact(geometry: CapacitorGeometry, V0):
    """Closed-form integral of E_x^2 along the septum for sharp gaps."""
    h = geometry.mean_spacing
    return V0 * V0 / (h * h) * effective_length(geometry, "exact")


def e2_integral(geometry: CapacitorGeometry, V0):
    """Integral of E^2 along the beam line used for the polarizability (V^2/m).

    Approximate effective length with the h(z) thickness averages applied;
    the septum offset correction (~5e-5) is left out.
    """
    a, h = geometry.half_length, geometry.mean_spacing
    return V0 * V0 * (2.0 * a / h**2 - 2.0 / (math.pi * h)) * geometry.tilt_factor


def e2_log_sensitivities(geometry: CapacitorGeometry):
    """d ln(e2_integral) / d ln(2a) and d ln(e2_integral) / d ln(h0)."""
    a, h = geometry.half_length, geometry.mean_spacing
    lead, end = 2.0 * a / h**2, 2.0 / (math.pi * h)
    d_len = lead / (lead - end)
    r = (geometry.spacing_tilt / h) ** 2
    d_h = -(2.0 * lead - end) / (lead - end) - 2.0 * r / (1.0 + r)
    return d_len, d_h

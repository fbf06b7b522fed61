"""Velocity distribution of the detected atoms and velocity-averaged fringes.

The detected atoms follow a Gaussian in v centred on the most probable
velocity u with width u / S (no v^3 prefactor).  A phase phi_m at v = u
scales as phi_m u / v, so averaging the fringe over the distribution both
reduces the visibility and shifts the phase.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _accel
from ._accel import njit

GH_NODES = 80
# embedded lower-order rule used only for the error estimate
GH_CHECK_NODES = 60
_T, _W = np.polynomial.hermite.hermgauss(GH_NODES)
_W = _W / math.sqrt(math.pi)
_T2, _W2 = np.polynomial.hermite.hermgauss(GH_CHECK_NODES)
_W2 = _W2 / math.sqrt(math.pi)
# beyond this phi_m / S neither rule resolves cos(phi_m / (1 + t/S))
MAX_PHASE_PER_S = 8.0
# largest accepted difference between the two rules in the cos / sin averages
QUADRATURE_TOLERANCE = 1e-4


class QuadratureError(ArithmeticError):
    pass


@dataclass(frozen=True)
class VelocityDistribution:
    u: float
    s_parallel: float

    def __post_init__(self):
        if not self.u > 0:
            raise ValueError("most probable velocity must be positive")
        if not self.s_parallel > 1:
            raise ValueError("parallel speed ratio must exceed 1")

    @property
    def fwhm(self):
        return 2.0 * math.sqrt(math.log(2.0)) * self.u / self.s_parallel


@dataclass(frozen=True)
class AveragedFringe:
    relative_visibility: float
    mean_phase: float


def pdf(dist: VelocityDistribution, v):
    s, u = dist.s_parallel, dist.u
    return s / (u * math.sqrt(math.pi)) * np.exp(-(((np.asarray(v, dtype=float) - u) * s / u) ** 2))


@njit(cache=True)
def _average_numba(phi, s, nodes, weights):
    n = phi.size
    a = np.zeros(n)
    b = np.zeros(n)
    for i in range(n):
        ca = 0.0
        cb = 0.0
        for m in range(nodes.size):
            d = nodes[m] / s
            if d <= -1.0:
                continue
            arg = phi[i] / (1.0 + d)
            ca += weights[m] * math.cos(arg)
            cb += weights[m] * math.sin(arg)
        a[i] = ca
        b[i] = cb
    return a, b


def _average_numpy(phi, s, nodes, weights):
    d = nodes / s
    keep = d > -1.0
    arg = np.outer(phi, 1.0 / (1.0 + d[keep]))
    w = weights[keep]
    return np.cos(arg) @ w, np.sin(arg) @ w


def average_fringe_numeric_array(phi_m, s_parallel):
    """Vectorized numeric average; returns (relative_visibility, mean_phase).

    Raises :class:`QuadratureError` when the 80-node result differs from the
    embedded 60-node one by more than ``QUADRATURE_TOLERANCE``; this happens
    for small S, where the Gaussian tail reaches the fast oscillations near
    v = 0.
    """
    if not s_parallel > 1:
        raise ValueError("parallel speed ratio must exceed 1")
    phi = np.atleast_1d(np.asarray(phi_m, dtype=float))
    if not np.all(np.isfinite(phi)):
        raise ValueError("phi_m must be finite")
    if phi.size and np.max(np.abs(phi)) / s_parallel > MAX_PHASE_PER_S:
        raise QuadratureError(
            f"|phi_m| / S = {np.max(np.abs(phi)) / s_parallel:.2f} exceeds the "
            f"{GH_NODES}-node rule's range ({MAX_PHASE_PER_S})")
    kernel = _average_numba if _accel.USE_NUMBA else _average_numpy
    a, b = kernel(phi, float(s_parallel), _T, _W)
    if phi.size:
        a2, b2 = kernel(phi, float(s_parallel), _T2, _W2)
        err = max(np.max(np.abs(a - a2)), np.max(np.abs(b - b2)))
        if err > QUADRATURE_TOLERANCE:
            raise QuadratureError(f"quadrature error estimate {err:.1e} at S = {s_parallel:.3g}, "
                                  f"max |phi_m| = {np.max(np.abs(phi)):.3g}")
    vis = np.minimum(np.hypot(a, b), 1.0)  # round-off can exceed 1 at phi_m = 0
    phase = np.arctan2(b, a)
    phase += 2.0 * np.pi * np.round((phi - phase) / (2.0 * np.pi))
    return vis, phase


def average_fringe_numeric(phi_m, s_parallel) -> AveragedFringe:
    vis, phase = average_fringe_numeric_array(phi_m, s_parallel)
    return AveragedFringe(float(vis[0]), float(phase[0]))


def average_fringe_closed_array(phi_m, s_parallel):
    """Second-order expansion of u/v in the velocity offset, integrated exactly."""
    if not s_parallel > 1:
        raise ValueError("parallel speed ratio must exceed 1")
    phi = np.asarray(phi_m, dtype=float)
    s2 = s_parallel * s_parallel
    q = s2 * s2 + phi * phi
    vis = s_parallel / q**0.25 * np.exp(-phi * phi * s2 / (4.0 * q))
    phase = phi + 0.5 * np.arctan(phi / s2) - phi**3 / (4.0 * q)
    return vis, phase


def average_fringe_closed(phi_m, s_parallel) -> AveragedFringe:
    vis, phase = average_fringe_closed_array(phi_m, s_parallel)
    return AveragedFringe(float(vis), float(phase))

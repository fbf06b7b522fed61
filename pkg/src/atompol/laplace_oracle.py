"""Finite-difference oracle for the half-capacitor Laplace problem.

Solves V(x, z) on x in [0, h0], z in [-a - pad, a + pad] by red-black
successive over-relaxation with

* V = 0 on the septum (x = 0),
* V = boundary_potential(z) on the electrode plane (x = h0),
* zero normal derivative at both z ends (the field there is ~exp(-pi pad/h0)).

Nothing here reuses the analytic kernel; only the boundary profile is shared
with :mod:`atompol.capfield`.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import _accel
from ._accel import njit
from .capfield import CapacitorGeometry, boundary_potential

log = logging.getLogger(__name__)


class OracleConvergenceError(RuntimeError):
    def __init__(self, message, residual, sweeps):
        super().__init__(f"{message} (max update {residual:.3e} V after {sweeps} sweeps)")
        self.residual = residual
        self.sweeps = sweeps


@dataclass(frozen=True)
class Grid2D:
    x: np.ndarray
    z: np.ndarray
    potential: np.ndarray  # shape (nx, nz)
    boundary: np.ndarray  # True where Dirichlet data is imposed
    residual: float
    sweeps: int

    @property
    def nx(self):
        return self.x.size

    @property
    def nz(self):
        return self.z.size

    @property
    def dx(self):
        return float(self.x[1] - self.x[0])

    @property
    def dz(self):
        return float(self.z[1] - self.z[0])

    def snap(self, x):
        """Index of the grid line nearest ``x`` and the snap distance (m)."""
        if not 0 <= x <= self.x[-1]:
            raise ValueError(f"x = {x} outside the grid [0, {self.x[-1]}]")
        j = int(round(x / self.dx))
        return j, abs(self.x[j] - x)

    def to_csv(self, path):
        X, Z = np.meshgrid(self.x, self.z, indexing="ij")
        table = np.column_stack([X.ravel(), Z.ravel(), self.potential.ravel()])
        np.savetxt(path, table, delimiter=",", header="x_m,z_m,V", comments="", fmt="%.12e")
        return path


@njit(cache=True)
def _sor_numba(u, omega, tol, max_sweeps):
    # u is padded with one ghost column at each z end
    nx, nzp = u.shape
    nz = nzp - 2
    delta = 0.0
    for sweep in range(1, max_sweeps + 1):
        delta = 0.0
        for color in range(2):
            for j in range(1, nx - 1):
                k0 = 1 + (j + color + 1) % 2
                for k in range(k0, nz + 1, 2):
                    new = 0.25 * (u[j - 1, k] + u[j + 1, k] + u[j, k - 1] + u[j, k + 1])
                    d = omega * (new - u[j, k])
                    u[j, k] += d
                    if abs(d) > delta:
                        delta = abs(d)
            for j in range(1, nx - 1):
                u[j, 0] = u[j, 2]
                u[j, nz + 1] = u[j, nz - 1]
        if delta < tol:
            return sweep, delta
    return -1, delta


def _sor_numpy(u, omega, tol, max_sweeps):
    nx, nzp = u.shape
    jj, kk = np.meshgrid(np.arange(1, nx - 1), np.arange(1, nzp - 1), indexing="ij")
    masks = [((jj + kk) % 2 == 0), ((jj + kk) % 2 == 1)]
    inner = u[1:-1, 1:-1]
    delta = 0.0
    for sweep in range(1, max_sweeps + 1):
        delta = 0.0
        for mask in masks:
            new = 0.25 * (u[:-2, 1:-1] + u[2:, 1:-1] + u[1:-1, :-2] + u[1:-1, 2:])
            d = omega * (new - inner) * mask
            inner += d
            delta = max(delta, float(np.abs(d).max()))
            u[1:-1, 0] = u[1:-1, 2]
            u[1:-1, -1] = u[1:-1, -3]
        if delta < tol:
            return sweep, delta
    return -1, delta


def optimal_omega(nx):
    # Jacobi spectral radius with Dirichlet in x and Neumann in z (dx == dz)
    rho = 0.5 * (math.cos(math.pi / (nx - 1)) + 1.0)
    return 2.0 / (1.0 + math.sqrt(1.0 - rho * rho))


def solve_potential(geometry: CapacitorGeometry, V0, resolution=40, domain_pad=10.0,
                    tolerance=1e-10, *, ideal_plates=False, max_sweeps=1_000_000,
                    omega=None, ramp="linear") -> Grid2D:
    """Relax the half-capacitor potential.

    Parameters
    ----------
    resolution : int
        Nodes per mean spacing h0 (grid step h0 / resolution in x and z).
    domain_pad : float
        Extra length beyond each electrode end, in units of h0.
    tolerance : float
        Stop once the largest single-node update of a sweep is below this (V).
    ideal_plates : bool
        Hold the whole electrode plane at V0 (infinite plane capacitor).
    """
    if resolution < 20:
        raise ValueError("resolution must be >= 20 nodes per h0")
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    if domain_pad < 10:
        raise ValueError("domain_pad must be >= 10 h0")
    h0, a = geometry.mean_spacing, geometry.half_length
    step = h0 / resolution
    nx = resolution + 1
    half_cells = int(math.ceil((a + domain_pad * h0) / step))
    z = step * np.arange(-half_cells, half_cells + 1, dtype=float)
    x = step * np.arange(nx, dtype=float)
    nz = z.size

    top = np.full(nz, float(V0)) if ideal_plates else boundary_potential(geometry, V0, z, ramp)
    u = np.empty((nx, nz + 2))
    u[:, 1:-1] = np.outer(x / h0, top)  # start from the local plane solution
    u[0, :] = 0.0
    u[:, 0] = u[:, 2]
    u[:, -1] = u[:, -3]

    omega = optimal_omega(nx) if omega is None else omega
    kernel = _sor_numba if _accel.USE_NUMBA else _sor_numpy
    sweeps, delta = kernel(u, omega, tolerance, max_sweeps)
    if sweeps < 0:
        raise OracleConvergenceError("SOR did not converge", delta, max_sweeps)
    log.debug("SOR converged in %d sweeps (omega=%.4f, %s)", sweeps, omega, _accel.backend())

    boundary = np.zeros((nx, nz), dtype=bool)
    boundary[0, :] = boundary[-1, :] = True
    return Grid2D(x=x, z=z, potential=u[:, 1:-1].copy(), boundary=boundary,
                  residual=float(delta), sweeps=sweeps)


def line_fields(grid: Grid2D, j):
    """(E_x, E_z) along grid line ``j`` by finite differences."""
    V, dx, dz = grid.potential, grid.dx, grid.dz
    if j == 0:
        dvdx = (-3.0 * V[0] + 4.0 * V[1] - V[2]) / (2.0 * dx)
    elif j == grid.nx - 1:
        dvdx = (3.0 * V[-1] - 4.0 * V[-2] + V[-3]) / (2.0 * dx)
    else:
        dvdx = (V[j + 1] - V[j - 1]) / (2.0 * dx)
    dvdz = np.gradient(V[j], dz, edge_order=2)
    return -dvdx, -dvdz


def line_e2_integral(grid: Grid2D, x, with_snap=False):
    """Trapezoid integral of E_x^2 + E_z^2 along the grid line nearest ``x``."""
    if not 0 <= x < grid.x[-1]:
        raise ValueError(f"x = {x} outside [0, h0)")
    j, snap = grid.snap(x)
    ex, ez = line_fields(grid, j)
    value = float(np.trapezoid(ex * ex + ez * ez, grid.z))
    if snap > 0:
        log.debug("line x=%g snapped to grid line %d (distance %.3g m)", x, j, snap)
    return (value, snap) if with_snap else value

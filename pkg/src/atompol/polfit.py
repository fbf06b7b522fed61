"""Recover phi_m / V0^2 and the parallel speed ratio from measured phase shifts.

The model for each point is the velocity average of a fringe whose
on-velocity phase is k V0^2.  Phase shifts alone constrain k well but S only
loosely; relative visibilities, when supplied, enter the same chi^2.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .beam import QuadratureError, average_fringe_numeric_array
from .core import Measurement
from .lm import FitError, levenberg_marquardt

S_BOUNDS = (1.5, 50.0)
DEFAULT_S = 6.2


class UnwrapAmbiguityError(ValueError):
    pass


@dataclass(frozen=True)
class PhaseShiftDataset:
    """Phase shifts versus voltage, optionally with relative visibilities.

    Visibility points need not share the phase points' voltages.
    """

    voltages: np.ndarray
    phases: np.ndarray
    sigmas: np.ndarray
    visibility_voltages: np.ndarray = field(default_factory=lambda: np.zeros(0))
    visibilities: np.ndarray = field(default_factory=lambda: np.zeros(0))
    visibility_sigmas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # optional full covariances; when given, the fit uses them instead of the sigmas
    phase_covariance: np.ndarray | None = None
    visibility_covariance: np.ndarray | None = None

    def __post_init__(self):
        for name in ("voltages", "phases", "sigmas", "visibility_voltages", "visibilities",
                     "visibility_sigmas"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if not (self.voltages.shape == self.phases.shape == self.sigmas.shape):
            raise ValueError("voltages, phases and sigmas must have the same length")
        if not (self.visibility_voltages.shape == self.visibilities.shape
                == self.visibility_sigmas.shape):
            raise ValueError("visibility arrays must have the same length")
        if np.any(self.voltages < 0) or np.any(self.visibility_voltages < 0):
            raise ValueError("voltages must be non-negative")
        if np.any(self.sigmas <= 0) or np.any(self.visibility_sigmas <= 0):
            raise ValueError("sigmas must be positive")
        for name, n in (("phase_covariance", self.voltages.size),
                        ("visibility_covariance", self.visibilities.size)):
            cov = getattr(self, name)
            if cov is not None:
                cov = np.asarray(cov, dtype=float)
                if cov.shape != (n, n):
                    raise ValueError(f"{name} must have shape ({n}, {n})")
                object.__setattr__(self, name, cov)

    @property
    def has_visibility(self):
        return self.visibilities.size > 0

    @classmethod
    def from_estimates(cls, phase_estimates, visibility_estimates=(), covariances=None):
        """From ``fringes.phase_shift_estimates`` / ``fringes.visibility_estimates``.

        ``covariances`` is the ``(phase, visibility)`` pair returned by
        ``fringes.bracket_covariance``.
        """
        pc, vc = covariances if covariances is not None else (None, None)
        if vc is not None and len(visibility_estimates) == 0:
            vc = None
        return cls([e[0] for e in phase_estimates], [e[1].value for e in phase_estimates],
                   [e[1].sigma for e in phase_estimates],
                   [e[0] for e in visibility_estimates],
                   [e[1].value for e in visibility_estimates],
                   [e[1].sigma for e in visibility_estimates], pc, vc)

    def phases_only(self):
        return replace(self, visibility_voltages=np.zeros(0), visibilities=np.zeros(0),
                       visibility_sigmas=np.zeros(0), visibility_covariance=None)

    def without_covariance(self):
        return replace(self, phase_covariance=None, visibility_covariance=None)

    def sorted(self):
        order = np.argsort(self.voltages, kind="stable")
        cov = self.phase_covariance
        if cov is not None:
            cov = cov[np.ix_(order, order)]
        return replace(self, voltages=self.voltages[order], phases=self.phases[order],
                       sigmas=self.sigmas[order], phase_covariance=cov)

    def rescaled(self, factor):
        """Same data with every voltage multiplied by ``factor``."""
        return replace(self, voltages=self.voltages * factor,
                       visibility_voltages=self.visibility_voltages * factor)

    def to_csv(self, path):
        """``V0,phase_rad,sigma_rad`` plus ``rel_visibility,sigma_visibility``
        when visibilities sit at the same voltages as the phases."""
        joint = self.has_visibility and np.array_equal(self.visibility_voltages, self.voltages)
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            head = ["V0", "phase_rad", "sigma_rad"]
            cols = [self.voltages, self.phases, self.sigmas]
            if joint:
                head += ["rel_visibility", "sigma_visibility"]
                cols += [self.visibilities, self.visibility_sigmas]
            w.writerow(head)
            for row in zip(*cols):
                w.writerow([repr(float(x)) for x in row])
        return path

    @classmethod
    def from_csv(cls, path):
        lines = [l for l in Path(path).read_text().splitlines() if l.strip() and not l.startswith("#")]
        rows = list(csv.reader(lines))
        header, body = [h.strip() for h in rows[0]], rows[1:]
        col = {h: np.array([float(r[i]) for r in body]) for i, h in enumerate(header)}
        for key in ("V0", "phase_rad", "sigma_rad"):
            if key not in col:
                raise ValueError(f"phase-shift CSV lacks column {key!r}")
        if "rel_visibility" in col and "sigma_visibility" in col:
            return cls(col["V0"], col["phase_rad"], col["sigma_rad"], col["V0"],
                       col["rel_visibility"], col["sigma_visibility"])
        return cls(col["V0"], col["phase_rad"], col["sigma_rad"])


@dataclass(frozen=True)
class PolarizabilityFit:
    k: Measurement  # rad / V^2
    s_parallel: Measurement
    covariance: np.ndarray  # (k, S), unscaled
    chi2_per_dof: float
    dof: int
    iterations: int = 0

    def __post_init__(self):
        if not self.k.value > 0:
            raise ValueError("fitted k must be positive")
        if not self.s_parallel.value > 1:
            raise ValueError("fitted S must exceed 1")

    @property
    def scale(self):
        """sqrt(chi2/dof), the factor for residual-scaled errors."""
        return math.sqrt(self.chi2_per_dof) if self.dof > 0 else 1.0

    @property
    def k_scaled(self):
        return Measurement(self.k.value, self.k.sigma * self.scale)

    @property
    def s_parallel_scaled(self):
        return Measurement(self.s_parallel.value, self.s_parallel.sigma * self.scale)

    def to_dict(self):
        return {"k": self.k.value, "sigma_k": self.k.sigma,
                "S": self.s_parallel.value, "sigma_S": self.s_parallel.sigma,
                "cov": self.covariance.tolist(), "chi2_dof": self.chi2_per_dof,
                "dof": self.dof, "sigma_k_scaled": self.k_scaled.sigma,
                "sigma_S_scaled": self.s_parallel_scaled.sigma}


def model_phase(k, s_parallel, voltages):
    return average_fringe_numeric_array(k * np.asarray(voltages, dtype=float) ** 2, s_parallel)[1]


def _refine_k(k, s, volts, phases, weights, iterations=3):
    for _ in range(iterations):
        base = model_phase(k, s, volts)
        dk = 1e-6 * k
        J = (model_phase(k + dk, s, volts) - model_phase(k - dk, s, volts)) / (2.0 * dk)
        k = k + np.sum(weights * J * (phases - base)) / np.sum(weights * J * J)
    return k


def unwrap_by_voltage(dataset: PhaseShiftDataset, s_parallel=DEFAULT_S, ambiguity=0.5):
    """Choose the 2 pi branch of each phase by continuation in voltage.

    Points are processed in increasing V0.  Each phase is moved to the branch
    nearest the model prediction from the points already placed (zero before
    any are placed); the provisional k is then refined on all placed points.
    Raises :class:`UnwrapAmbiguityError` when the runner-up branch lies within
    ``ambiguity`` rad of the best one.
    """
    data = dataset.sorted()
    out = data.phases.copy()
    k = 0.0
    placed = []
    for i, (v, phi) in enumerate(zip(data.voltages, data.phases)):
        if v == 0:
            out[i] = phi
            continue
        pred = float(model_phase(k, s_parallel, [v])[0]) if k > 0 else 0.0
        m = round((pred - phi) / (2.0 * np.pi))
        cands = phi + 2.0 * np.pi * np.array([m - 1, m, m + 1])
        dist = np.sort(np.abs(cands - pred))
        if dist[1] - dist[0] < ambiguity:
            raise UnwrapAmbiguityError(
                f"point at V0={v:g} V: branches {dist[0]:.3f} and {dist[1]:.3f} rad from "
                f"the prediction {pred:.3f} rad are within {ambiguity} rad")
        out[i] = cands[np.argmin(np.abs(cands - pred))]
        placed.append(i)
        idx = np.array(placed)
        vv, pp, ww = data.voltages[idx], out[idx], 1.0 / data.sigmas[idx] ** 2
        if k <= 0:
            k = float(np.sum(ww * pp * vv**2) / np.sum(ww * vv**4)) / (1 + 0.5 / s_parallel**2)
        if k > 0:
            k = float(_refine_k(k, s_parallel, vv, pp, ww))
    return replace(data, phases=out)


def initial_k(dataset: PhaseShiftDataset, s_parallel=DEFAULT_S):
    """Slope estimate from the lowest-voltage points with |phi| < pi."""
    data = dataset.sorted()
    nz = data.voltages > 0
    v, p, s = data.voltages[nz], data.phases[nz], data.sigmas[nz]
    # leading run of points still inside the first branch
    keep = np.cumsum(np.abs(p) >= np.pi) == 0
    v, p, w = v[keep], p[keep], 1.0 / s[keep] ** 2
    if v.size == 0:
        raise FitError("no low-voltage point to seed k")
    return float(np.sum(w * p * v**2) / np.sum(w * v**4)) / (1 + 0.5 / s_parallel**2)


def _whitener(cov, sigmas):
    """Map raw residuals to independent unit-variance ones."""
    if cov is None:
        return lambda r: r / sigmas
    chol = np.linalg.cholesky(cov)
    return lambda r: np.linalg.solve(chol, r)


def fit(dataset: PhaseShiftDataset, k0=None, s0=DEFAULT_S, use_visibility=True) -> PolarizabilityFit:
    """Weighted least-squares fit of (k, S).

    Phases (already unwrapped) always enter with weights 1/sigma^2, or through
    the full covariance when the dataset carries one.  When the dataset also
    has relative visibilities and ``use_visibility`` is set, they enter the
    same chi^2 in the same way; this is what pins S.
    """
    volts, phases, sigmas = dataset.voltages, dataset.phases, dataset.sigmas
    nz = volts > 0
    if nz.sum() < 4:
        raise ValueError("need at least four non-zero-voltage points")
    v2 = volts[nz] ** 2
    if v2.max() < 4.0 * v2.min():
        raise ValueError("voltages must span at least a factor 4 in V0^2")
    if k0 is None:
        k0 = initial_k(dataset, s0)
    if not k0 > 0:
        raise FitError("initial k must be positive")
    joint = use_visibility and dataset.has_visibility
    vv, vis, vsig = dataset.visibility_voltages, dataset.visibilities, dataset.visibility_sigmas
    white_phase = _whitener(dataset.phase_covariance, sigmas)
    white_vis = _whitener(dataset.visibility_covariance, vsig)

    # fit k / k0 so both parameters are of order one
    n_res = volts.size + (vis.size if joint else 0)

    def resid(p):
        try:
            r = white_phase(model_phase(p[0] * k0, p[1], volts) - phases)
            if joint:
                model_vis = average_fringe_numeric_array(p[0] * k0 * vv**2, p[1])[0]
                r = np.concatenate([r, white_vis(model_vis - vis)])
        except QuadratureError:
            # outside the model's accurate range: the optimizer rejects this step
            return np.full(n_res, np.inf)
        return r

    lo, hi = S_BOUNDS
    res = levenberg_marquardt(resid, [1.0, s0], lower=[1e-6, lo], upper=[np.inf, hi],
                              rel_step=1e-6)
    if res.at_bound[1]:
        raise FitError(f"parallel speed ratio hit its bound ({res.params[1]:.3g})", res.params)
    scale = np.diag([k0, 1.0])
    cov = scale @ res.covariance @ scale
    k = res.params[0] * k0
    return PolarizabilityFit(k=Measurement(k, math.sqrt(cov[0, 0])),
                             s_parallel=Measurement(res.params[1], math.sqrt(cov[1, 1])),
                             covariance=cov, chi2_per_dof=res.chi2_per_dof, dof=res.dof,
                             iterations=res.iterations)


def predict_relative_visibility(result: PolarizabilityFit, voltages):
    vis, _ = average_fringe_numeric_array(result.k.value * np.asarray(voltages, dtype=float) ** 2,
                                          result.s_parallel.value)
    return vis if np.ndim(voltages) else float(vis[0])


def prediction_table(result: PolarizabilityFit, voltages):
    """Rows of (V0, phase, relative visibility) for plotting."""
    voltages = np.asarray(voltages, dtype=float)
    vis, phase = average_fringe_numeric_array(result.k.value * voltages**2, result.s_parallel.value)
    return np.column_stack([voltages, phase, vis])

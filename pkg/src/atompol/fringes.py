"""Mach-Zehnder fringe recordings: synthesis, sinusoid fits, phase-shift estimator.

Each recording scans the third grating mirror with a piezo ramp, so channel n
sees the fringe phase a + b n + c n^2.  A zero-field recording is taken
before and after every high-voltage one; the two bracketing phases are
averaged to remove slow drift.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .beam import average_fringe_numeric_array
from .core import Measurement
from .lm import FitError, levenberg_marquardt

log = logging.getLogger(__name__)


def wrap_phase(phi):
    """Map to (-pi, pi]."""
    w = np.mod(np.asarray(phi, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


def grating_phase(x1, x2, x3, order, laser_wavevector):
    """Fringe phase from the three grating (mirror) positions."""
    if int(order) != order or order < 1:
        raise ValueError("diffraction order must be a positive integer")
    return order * 2.0 * laser_wavevector * (x1 + x3 - 2.0 * x2)


@dataclass
class FringeRecording:
    counts: np.ndarray
    dwell: float = 0.36
    voltage: float = 0.0
    start_time: float = 0.0
    index: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if not self.dwell > 0:
            raise ValueError("dwell must be positive")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def channels(self):
        return self.counts.size

    def to_csv(self, path):
        path = Path(path)
        integer = np.issubdtype(self.counts.dtype, np.integer)
        with path.open("w") as fh:
            fh.write(f"# V0={self.voltage!r}\n# dwell_s={self.dwell!r}\n")
            fh.write(f"# t0_s={self.start_time!r}\n# index={self.index}\n")
            fh.write("channel,counts\n")
            for n, c in enumerate(self.counts):
                fh.write(f"{n},{int(c) if integer else repr(float(c))}\n")
        return path

    @classmethod
    def from_csv(cls, path):
        header = {}
        rows = []
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                header[key.strip()] = value.strip()
            elif line.startswith("channel"):
                continue
            else:
                rows.append(line.split(",")[1])
        try:
            counts = np.array([int(r) for r in rows])
        except ValueError:
            counts = np.array([float(r) for r in rows])
        return cls(counts=counts, dwell=float(header.get("dwell_s", 0.36)),
                   voltage=float(header.get("V0", 0.0)),
                   start_time=float(header.get("t0_s", 0.0)),
                   index=int(header.get("index", 0)))


def write_sequence(recordings: Sequence[FringeRecording], directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for rec in recordings:
        name = f"recording_{rec.index:03d}.csv"
        rec.to_csv(directory / name)
        names.append(name)
    manifest = directory / "manifest.json"
    manifest.write_text(json.dumps({"recordings": names}, indent=2))
    return manifest


def read_sequence(manifest):
    manifest = Path(manifest)
    names = json.loads(manifest.read_text())["recordings"]
    return [FringeRecording.from_csv(manifest.parent / n) for n in names]


@dataclass(frozen=True)
class SequencePlan:
    """Acquisition schedule and the noise/drift environment.

    Recording i (1-based) is at zero field for odd i and at ``voltage_step * i``
    for even i.  With ``trailing_reference`` a final zero-field recording is
    appended when the schedule would otherwise end on a high-voltage one.
    """

    recordings: int = 44
    voltage_step: float = 10.0  # V per recording index
    drift_rate: float = 7.5e-3  # rad / min
    scatter_rms: float = 0.033  # rad, per recording
    period: float = 180.0  # s between recording starts
    channels: int = 471
    dwell: float = 0.36  # s
    ramp_b: float = 0.05  # rad / channel
    ramp_c: float = 2e-5  # rad / channel^2
    initial_phase: float = 0.4  # rad
    flux_noise: float = 0.02  # relative, per channel
    visibility_scatter: float = 0.01  # in units of the zero-field visibility, per recording
    trailing_reference: bool = True

    def __post_init__(self):
        if self.recordings < 3:
            raise ValueError("need at least three recordings")
        if self.channels < 50:
            raise ValueError("need at least 50 channels per recording")
        if self.dwell <= 0 or self.period <= 0:
            raise ValueError("dwell and period must be positive")
        if min(self.scatter_rms, self.flux_noise, self.visibility_scatter) < 0:
            raise ValueError("noise amplitudes must be non-negative")

    def voltages(self):
        v = [0.0 if i % 2 else self.voltage_step * i for i in range(1, self.recordings + 1)]
        if self.trailing_reference and v[-1] != 0.0:
            v.append(0.0)
        return np.array(v)


@dataclass(frozen=True)
class FringeTruth:
    k: float  # phi_m / V0^2, rad / V^2
    s_parallel: float
    count_rate: float = 1e5  # counts / s
    visibility: float = 0.62

    def __post_init__(self):
        if self.k < 0 or not math.isfinite(self.k):
            raise ValueError("k must be finite and non-negative")
        if not self.s_parallel > 1:
            raise ValueError("parallel speed ratio must exceed 1")
        if not self.count_rate > 0:
            raise ValueError("count rate must be positive")
        if not 0 <= self.visibility <= 1:
            raise ValueError("visibility must lie in [0, 1]")


def expected_counts(truth: FringeTruth, plan: SequencePlan, offset, voltage, vis_jitter=0.0):
    """Noise-free counts per channel for one recording at phase offset ``offset``.

    ``vis_jitter`` is added to the relative visibility (units of the
    zero-field visibility) before it multiplies the fringe term.
    """
    vis, phase = average_fringe_numeric_array(truth.k * voltage**2, truth.s_parallel)
    n = np.arange(plan.channels, dtype=float)
    psi = offset + phase[0] + plan.ramp_b * n + plan.ramp_c * n * n
    contrast = float(np.clip(truth.visibility * (vis[0] + vis_jitter), 0.0, 1.0))
    return truth.count_rate * plan.dwell * (1.0 + contrast * np.cos(psi))


def synthesize(plan: SequencePlan, truth: FringeTruth, seed=0, noiseless=False):
    """Simulate a full acquisition sequence.

    Every recording draws from its own generator seeded by ``(seed, index)``.
    The zero-field phase follows the linear drift plus independent Gaussian
    scatter, the fringe contrast jitters from recording to recording, and
    counts carry per-channel flux noise and Poisson statistics.  ``noiseless``
    drops every random term, returning the expected (float) counts.
    """
    if truth.count_rate * plan.dwell <= 10:
        raise ValueError("count_rate * dwell too small for meaningful counts")
    recordings = []
    for i, volts in enumerate(plan.voltages(), start=1):
        rng = np.random.default_rng([int(seed), i])
        t0 = (i - 1) * plan.period
        scatter = 0.0 if noiseless else rng.normal(0.0, plan.scatter_rms)
        jitter = 0.0 if noiseless else rng.normal(0.0, plan.visibility_scatter)
        offset = plan.initial_phase + plan.drift_rate * t0 / 60.0 + scatter
        mu = expected_counts(truth, plan, offset, volts, jitter)
        if noiseless:
            counts = mu
        else:
            if plan.flux_noise > 0:
                mu = mu * np.clip(1.0 + plan.flux_noise * rng.standard_normal(mu.size), 0.0, None)
            counts = rng.poisson(mu)
        recordings.append(FringeRecording(counts=counts, dwell=plan.dwell, voltage=float(volts),
                                          start_time=t0, index=i,
                                          meta={"offset": offset, "scatter": scatter,
                                                "visibility_jitter": jitter}))
    return recordings


@dataclass
class FringeFit:
    intensity: float  # counts / channel
    visibility: float
    a: float
    b: float
    c: float
    covariance: np.ndarray  # (I0, V, a, b, c), scaled
    mean_phase: Measurement
    chi2_per_dof: float
    voltage: float = 0.0
    start_time: float = 0.0
    index: int = 0
    fixed_ramp: bool = False

    def to_dict(self):
        return {"index": self.index, "V0": self.voltage, "t0_s": self.start_time,
                "I0": self.intensity, "visibility": self.visibility,
                "a": self.a, "b": self.b, "c": self.c,
                "mean_phase": self.mean_phase.value, "mean_phase_sigma": self.mean_phase.sigma,
                "chi2_dof": self.chi2_per_dof, "fixed_ramp": self.fixed_ramp}


def _initial_guess(x, n, ramp):
    mean = x.mean()
    y = x - mean
    if ramp is None:
        pad = 16 * x.size
        spec = np.fft.rfft(y, pad)
        kmax = int(np.argmax(np.abs(spec[1:]))) + 1
        b = 2.0 * np.pi * kmax / pad
        c = 0.0
    else:
        b, c = ramp
    proj = np.sum(y * np.exp(-1j * (b * n + c * n * n)))
    vis = min(2.0 * abs(proj) / (x.size * mean), 0.99)
    return mean, max(vis, 1e-3), float(np.angle(proj)), b, c


def fit_recording(rec: FringeRecording, fixed_ramp=None) -> FringeFit:
    """Weighted fit of I0 [1 + V cos(a + b n + c n^2)] to one recording.

    ``fixed_ramp=(b, c)`` holds the ramp coefficients and fits only I0, V, a.
    Weights are Poisson, sigma_n^2 = max(counts_n, 1).  The covariance is
    scaled by max(1, chi2/dof), so excess noise widens the error bars while
    noise-free data keeps the Poisson floor.
    """
    x = np.asarray(rec.counts, dtype=float)
    N = x.size
    if N < 50:
        raise ValueError("need at least 50 channels")
    n = np.arange(N, dtype=float)
    # centred, scaled channel coordinate keeps the normal equations well conditioned
    nbar, half = 0.5 * (N - 1), 0.5 * (N - 1)
    s = (n - nbar) / half
    inv_sigma = 1.0 / np.sqrt(np.maximum(x, 1.0))

    I0, V, a0, b0, c0 = _initial_guess(x, n, fixed_ramp)
    # psi = alpha + beta s + gamma s^2  <=>  a + b n + c n^2
    gamma0 = c0 * half * half
    beta0 = (b0 + 2.0 * c0 * nbar) * half
    alpha0 = a0 + b0 * nbar + c0 * nbar * nbar

    if fixed_ramp is None:
        def unpack(p):
            return p[0], p[1], p[2] + p[3] * s + p[4] * s * s

        def resid(p):
            i0, v, psi = unpack(p)
            return (i0 * (1.0 + v * np.cos(psi)) - x) * inv_sigma

        def jac(p):
            i0, v, psi = unpack(p)
            cs, sn = np.cos(psi), np.sin(psi)
            da = -i0 * v * sn
            return np.column_stack([1.0 + v * cs, i0 * cs, da, da * s, da * s * s]) * inv_sigma[:, None]

        p0 = [I0, V, alpha0, beta0, gamma0]
        lower = [0.0, 0.0, -np.inf, -np.inf, -np.inf]
        upper = [np.inf, 1.0, np.inf, np.inf, np.inf]
    else:
        ramp_s = beta0 * s + gamma0 * s * s

        def resid(p):
            return (p[0] * (1.0 + p[1] * np.cos(p[2] + ramp_s)) - x) * inv_sigma

        def jac(p):
            psi = p[2] + ramp_s
            cs, sn = np.cos(psi), np.sin(psi)
            return np.column_stack([1.0 + p[1] * cs, p[0] * cs, -p[0] * p[1] * sn]) * inv_sigma[:, None]

        p0 = [I0, V, alpha0]
        lower = [0.0, 0.0, -np.inf]
        upper = [np.inf, 1.0, np.inf]

    res = levenberg_marquardt(resid, p0, jac, lower=lower, upper=upper, max_iter=500)
    p = res.params
    scale = max(1.0, res.chi2_per_dof)
    cov_int = res.covariance * scale
    ms2 = float(np.mean(s * s))

    if fixed_ramp is None:
        alpha, beta, gamma = p[2], p[3], p[4]
        # linear map internal (I0, V, alpha, beta, gamma) -> (I0, V, a, b, c)
        T = np.eye(5)
        T[2, 2:] = [1.0, -nbar / half, nbar * nbar / (half * half)]
        T[3, 2:] = [0.0, 1.0 / half, -2.0 * nbar / (half * half)]
        T[4, 2:] = [0.0, 0.0, 1.0 / (half * half)]
        cov = T @ cov_int @ T.T
        a, b, c = T[2, 2:] @ p[2:], T[3, 2:] @ p[2:], T[4, 2:] @ p[2:]
        grad = np.array([0.0, 0.0, 1.0, 0.0, ms2])
        mean_value = alpha + gamma * ms2
    else:
        b, c = fixed_ramp
        a = p[2] - beta0 * nbar / half + gamma0 * nbar * nbar / (half * half)
        cov = np.zeros((5, 5))
        cov[:3, :3] = cov_int
        grad = np.array([0.0, 0.0, 1.0])
        mean_value = p[2] + gamma0 * ms2
    sigma = float(np.sqrt(grad @ cov_int @ grad))
    if not sigma > 0:
        sigma = float(np.finfo(float).eps)
    a_wrapped = wrap_phase(a)
    mean_value += a_wrapped - a
    return FringeFit(intensity=float(p[0]), visibility=float(p[1]), a=a_wrapped, b=float(b),
                     c=float(c), covariance=cov, mean_phase=Measurement(float(mean_value), sigma),
                     chi2_per_dof=float(res.chi2_per_dof), voltage=rec.voltage,
                     start_time=rec.start_time, index=rec.index,
                     fixed_ramp=fixed_ramp is not None)


def fit_sequence(recordings: Sequence[FringeRecording]):
    """Fit a time-ordered sequence: zero-field recordings free, the others with
    b and c taken from the previous zero-field fit."""
    fits = []
    last_zero = None
    for rec in recordings:
        if rec.voltage == 0:
            fit = fit_recording(rec)
            last_zero = fit
        else:
            if last_zero is None:
                raise FitError(f"recording {rec.index} has no preceding zero-field recording")
            fit = fit_recording(rec, fixed_ramp=(last_zero.b, last_zero.c))
        fits.append(fit)
    return fits


def phase_shift_estimates(fits: Sequence[FringeFit], scatter_rms=0.033):
    """Bracketed estimator psi_i - (psi_{i-1} + psi_{i+1}) / 2 per high-voltage fit.

    Returns a list of ``(V0, Measurement)``; values are wrapped to (-pi, pi].
    """
    out = []
    for i, fit in enumerate(fits):
        if fit.voltage == 0:
            continue
        before = fits[i - 1] if i > 0 else None
        after = fits[i + 1] if i + 1 < len(fits) else None
        if before is None or after is None or before.voltage != 0 or after.voltage != 0:
            warnings.warn(f"recording {fit.index} at {fit.voltage} V is not bracketed; skipped",
                          stacklevel=2)
            continue
        z0 = before.mean_phase.value
        z1 = after.mean_phase.value
        z1 += 2.0 * np.pi * round((z0 - z1) / (2.0 * np.pi))
        shift = wrap_phase(fit.mean_phase.value - 0.5 * (z0 + z1))
        sigma = math.hypot(fit.mean_phase.sigma, scatter_rms)
        out.append((fit.voltage, Measurement(shift, sigma)))
    return out


def visibility_estimates(fits: Sequence[FringeFit], visibility_scatter=0.01):
    """Relative visibility V_i / ((V_{i-1} + V_{i+1}) / 2) per high-voltage fit.

    The sigma combines the propagated fit errors with the configured
    recording-to-recording visibility scatter.
    """
    out = []
    for i, fit in enumerate(fits):
        if fit.voltage == 0 or i == 0 or i + 1 >= len(fits):
            continue
        before, after = fits[i - 1], fits[i + 1]
        if before.voltage != 0 or after.voltage != 0:
            continue
        ref = 0.5 * (before.visibility + after.visibility)
        rel = fit.visibility / ref
        sv = lambda f: math.sqrt(max(f.covariance[1, 1], 0.0))
        stat = math.sqrt(sv(fit) ** 2 + (0.5 * rel) ** 2 * (sv(before) ** 2 + sv(after) ** 2)) / ref
        out.append((fit.voltage, Measurement(rel, math.hypot(stat, visibility_scatter))))
    return out


def _bracketed_indices(fits):
    return [i for i, f in enumerate(fits)
            if f.voltage != 0 and 0 < i < len(fits) - 1
            and fits[i - 1].voltage == 0 and fits[i + 1].voltage == 0]


def bracket_covariance(fits: Sequence[FringeFit], scatter_rms=0.033, visibility_scatter=0.01):
    """Full covariances of the bracketed phase and relative-visibility estimates.

    Consecutive estimates share a zero-field recording, so their errors are
    positively correlated and each one carries the scatter of three
    recordings.  Both estimators are linear (to first order) in the
    per-recording values; this propagates independent per-recording errors,
    fit variance plus configured scatter, through them.  Rows follow the order
    of :func:`phase_shift_estimates` and :func:`visibility_estimates`.
    """
    idx = _bracketed_indices(fits)
    n = len(fits)
    zero_vis = [f.visibility for f in fits if f.voltage == 0]
    vis_unit = float(np.mean(zero_vis)) if zero_vis else 1.0
    var_phase = np.array([f.mean_phase.sigma**2 + scatter_rms**2 for f in fits])
    var_vis = np.array([max(f.covariance[1, 1], 0.0) + (visibility_scatter * vis_unit) ** 2
                        for f in fits])
    A = np.zeros((len(idx), n))
    B = np.zeros((len(idx), n))
    for row, i in enumerate(idx):
        A[row, i], A[row, i - 1], A[row, i + 1] = 1.0, -0.5, -0.5
        ref = 0.5 * (fits[i - 1].visibility + fits[i + 1].visibility)
        rel = fits[i].visibility / ref
        B[row, i], B[row, i - 1], B[row, i + 1] = 1.0 / ref, -0.5 * rel / ref, -0.5 * rel / ref
    return A @ np.diag(var_phase) @ A.T, B @ np.diag(var_vis) @ B.T

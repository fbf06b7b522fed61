"""Configuration, the polarizability chain and the end-to-end synthetic run."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import fringes, polfit
from .capfield import CapacitorGeometry, e2_integral, e2_log_sensitivities, effective_length
from .core import CONSTANTS, Measurement, PhysicalConstants, quadrature_sum
from .velocimetry import SourceConditions, bragg_velocity, combine, doppler_velocity

log = logging.getLogger(__name__)

# relative difference of the two hyperfine-level polarizabilities of the ground state
HYPERFINE_NOTE = ("hyperfine polarizability difference (-3.0e-6 relative) is negligible "
                  "at this accuracy and is not applied")


class PipelineError(RuntimeError):
    """An error raised inside a named pipeline stage."""

    def __init__(self, stage, error):
        super().__init__(f"[{stage}] {type(error).__name__}: {error}")
        self.stage = stage
        self.error = error


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, PipelineError):
            raise PipelineError(self.name, exc) from exc
        return False


def stage(name):
    """Context manager tagging any exception with the stage ``name``."""
    return _Stage(name)


@dataclass(frozen=True)
class VelocityInputs:
    bragg_angle: Measurement = Measurement(79.62e-6, 0.63e-6)
    doppler_shift: Measurement = Measurement(1589799521.8674958, 11926478.033514595)

    @classmethod
    def from_dict(cls, d):
        return cls(Measurement(d["bragg_angle_rad"], d["bragg_angle_sigma_rad"]),
                   Measurement(d["doppler_shift_hz"], d["doppler_shift_sigma_hz"]))

    def to_dict(self):
        return {"bragg_angle_rad": self.bragg_angle.value,
                "bragg_angle_sigma_rad": self.bragg_angle.sigma,
                "doppler_shift_hz": self.doppler_shift.value,
                "doppler_shift_sigma_hz": self.doppler_shift.sigma}


@dataclass(frozen=True)
class TruthInputs:
    """Values the synthetic run is generated from."""

    alpha_m3: float = 24.33e-30
    s_parallel: float = 8.0
    count_rate: float = 1e5
    visibility: float = 0.62


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs, in SI units.

    Load with :meth:`from_json`; :meth:`default` returns the shipped
    ``paper.json``.
    """

    geometry: CapacitorGeometry
    source: SourceConditions = field(default_factory=SourceConditions)
    constants: PhysicalConstants = CONSTANTS
    species: str = "li7"
    velocity: VelocityInputs = field(default_factory=VelocityInputs)
    measured_k: Measurement = Measurement(1.3870e-4, 1.0e-7)
    truth: TruthInputs = field(default_factory=TruthInputs)
    plan: fringes.SequencePlan = field(default_factory=fringes.SequencePlan)
    initial_s_parallel: float = polfit.DEFAULT_S
    use_visibility: bool = True
    reference_phases: tuple = (25.0, 3e-3)

    def __post_init__(self):
        self.constants.mass(self.species)  # raises on an unknown species
        if not self.measured_k.value > 0:
            raise ValueError("measured k must be positive")
        if not polfit.S_BOUNDS[0] < self.initial_s_parallel < polfit.S_BOUNDS[1]:
            raise ValueError("initial parallel speed ratio outside the fit bounds")

    @property
    def mass(self):
        return self.constants.mass(self.species)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"species", "constants", "geometry", "source", "velocity", "measured_k",
                 "truth", "plan", "fit", "reference_phases_rad"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        if "geometry" not in d:
            raise ValueError("config needs a 'geometry' section")
        fit = d.get("fit", {})
        k = d.get("measured_k", {"value": 1.3870e-4, "sigma": 1.0e-7})
        return cls(
            geometry=CapacitorGeometry(**d["geometry"]),
            source=SourceConditions.from_dict(d.get("source", {})),
            constants=CONSTANTS.with_overrides(**d.get("constants", {})),
            species=d.get("species", "li7"),
            velocity=VelocityInputs.from_dict(d["velocity"]) if "velocity" in d else VelocityInputs(),
            measured_k=Measurement(k["value"], k["sigma"]),
            truth=TruthInputs(**d.get("truth", {})),
            plan=fringes.SequencePlan(**d.get("plan", {})),
            initial_s_parallel=fit.get("initial_s_parallel", polfit.DEFAULT_S),
            use_visibility=fit.get("use_visibility", True),
            reference_phases=tuple(d.get("reference_phases_rad", (25.0, 3e-3))),
        )

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def default(cls) -> "ExperimentConfig":
        text = resources.files("atompol").joinpath("data/paper.json").read_text()
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        overrides = {"laser_wavelength": self.constants.laser_wavelength}
        return {"species": self.species, "constants": overrides,
                "geometry": asdict(self.geometry), "source": self.source.to_dict(),
                "velocity": self.velocity.to_dict(),
                "measured_k": self.measured_k.to_dict(), "truth": asdict(self.truth),
                "plan": asdict(self.plan),
                "fit": {"initial_s_parallel": self.initial_s_parallel,
                        "use_visibility": self.use_visibility},
                "reference_phases_rad": list(self.reference_phases)}


def alpha_over_u_per_k(geometry: CapacitorGeometry, constants: PhysicalConstants = CONSTANTS):
    """alpha / u for k = 1 rad/V^2 (m^2 s per rad/V^2)."""
    return constants.reduced_planck / (2.0 * math.pi * constants.vacuum_permittivity
                                       * e2_integral(geometry, 1.0))


def alpha_over_u_components(k: Measurement, geometry: CapacitorGeometry):
    """Relative uncertainty contributions to alpha / u, by source."""
    d_len, d_h = e2_log_sensitivities(geometry)
    rel_len = geometry.half_length_sigma / geometry.half_length
    rel_h = geometry.spacing_sigma / geometry.mean_spacing
    return {"effective_length": abs(d_len) * rel_len, "spacing": abs(d_h) * rel_h,
            "interferometric": k.relative if k.value else 0.0}


def alpha_over_u(k, geometry: CapacitorGeometry, constants: PhysicalConstants = CONSTANTS):
    """alpha / u = k hbar / (2 pi eps0 integral(E^2 dz) at V0 = 1), as a Measurement (m^2 s).

    ``k`` may be a bare float (no uncertainty) or a Measurement; the geometry
    uncertainties are always included.
    """
    k = k if isinstance(k, Measurement) else Measurement(float(k))
    if k.value < 0:
        raise ValueError("k must be non-negative")
    value = k.value * alpha_over_u_per_k(geometry, constants)
    rel = quadrature_sum(alpha_over_u_components(k, geometry).values())
    return Measurement(value, abs(value) * rel)


def velocity_sensitivity(phi, u, mass, L_eff, constants: PhysicalConstants = CONSTANTS):
    """Relative velocity change Delta v / v that produces phase ``phi``.

    (lambda_dB / L_eff) (phi / 2 pi) with lambda_dB = h / (m u).
    """
    if not (u > 0 and L_eff > 0 and mass > 0):
        raise ValueError("u, mass and L_eff must be positive")
    return constants.planck / (mass * u) / L_eff * np.asarray(phi) / (2.0 * math.pi)


@dataclass(frozen=True)
class AlphaResult:
    alpha: Measurement  # m^3
    alpha_au: Measurement
    alpha_over_u: Measurement  # m^2 s
    budget: dict  # named relative uncertainties
    delta_v_over_v: dict = field(default_factory=dict)  # reference phase (rad) -> dv/v
    note: str = HYPERFINE_NOTE

    @property
    def total_relative(self):
        return quadrature_sum(self.budget.values())

    def to_dict(self):
        return {"alpha_m3": self.alpha.to_dict(), "alpha_au": self.alpha_au.to_dict(),
                "alpha_over_u_m2s": self.alpha_over_u.to_dict(),
                "budget_relative": dict(self.budget), "total_relative": self.total_relative,
                "delta_v_over_v": {repr(k): v for k, v in self.delta_v_over_v.items()},
                "note": self.note}


def compute_alpha(alpha_over_u_value: Measurement, u: Measurement, components=None, *,
                  geometry: Optional[CapacitorGeometry] = None, mass=None,
                  reference_phases: Sequence[float] = (25.0, 3e-3),
                  constants: PhysicalConstants = CONSTANTS) -> AlphaResult:
    """alpha = (alpha / u) u with its uncertainty budget.

    ``components`` are the named relative contributions already inside
    ``alpha_over_u_value`` (see :func:`alpha_over_u_components`); without them
    its relative sigma enters as a single entry.  With ``geometry`` the
    velocity sensitivity is evaluated at ``reference_phases``.
    """
    if not u.value > 0:
        raise ValueError("velocity must be positive")
    budget = {"velocity": u.relative}
    if components is None:
        budget["alpha_over_u"] = alpha_over_u_value.relative if alpha_over_u_value.value else 0.0
    else:
        budget.update(components)
    value = alpha_over_u_value.value * u.value
    sigma = abs(value) * quadrature_sum(budget.values())
    alpha = Measurement(value, sigma)
    dvv = {}
    if geometry is not None:
        mass = constants.mass("li7") if mass is None else mass
        L = effective_length(geometry, "approx")
        dvv = {float(p): float(velocity_sensitivity(p, u.value, mass, L, constants))
               for p in reference_phases}
    return AlphaResult(alpha=alpha, alpha_au=alpha.scaled(1.0 / constants.bohr_radius_cubed),
                       alpha_over_u=alpha_over_u_value, budget=budget, delta_v_over_v=dvv)


def measured_velocity(config: ExperimentConfig):
    """(bragg, doppler, combined) velocity measurements from the config."""
    c = config.constants
    bragg = bragg_velocity(config.velocity.bragg_angle, c.laser_wavelength, config.mass, c)
    doppler = doppler_velocity(config.velocity.doppler_shift, c.laser_wavelength, c)
    return bragg, doppler, combine([bragg, doppler])


def alpha_from_k(config: ExperimentConfig, k: Measurement, u: Optional[Measurement] = None):
    """The full chain from a fitted k to alpha, with the budget split by source."""
    u = measured_velocity(config)[2] if u is None else u
    aou = alpha_over_u(k, config.geometry, config.constants)
    return compute_alpha(aou, u, alpha_over_u_components(k, config.geometry),
                         geometry=config.geometry, mass=config.mass,
                         reference_phases=config.reference_phases, constants=config.constants)


def truth_k(config: ExperimentConfig, u: Optional[float] = None):
    """phi_m / V0^2 implied by the configured true alpha."""
    u = measured_velocity(config)[2].value if u is None else u
    return config.truth.alpha_m3 / (u * alpha_over_u_per_k(config.geometry, config.constants))


@dataclass
class RunResult:
    alpha: AlphaResult
    fit: polfit.PolarizabilityFit
    truth_k: float
    phase_sensitivity: float  # rad / sqrt(Hz)
    artifacts: dict = field(default_factory=dict)  # name -> path relative to the output dir

    def to_dict(self):
        return {"alpha": self.alpha.to_dict(), "fit": self.fit.to_dict(), "truth_k": self.truth_k,
                "phase_sensitivity_rad_per_sqrt_hz": self.phase_sensitivity,
                "artifacts": dict(self.artifacts)}


def _write_json(path, payload):
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def write_fits_csv(fits_list, path):
    keys = list(fits_list[0].to_dict()) if fits_list else []
    with Path(path).open("w") as fh:
        fh.write(f"# recordings={len(fits_list)}\n")
        fh.write(",".join(keys) + "\n")
        for f in fits_list:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v)
                              for v in f.to_dict().values()) + "\n")
    return path


def run_end_to_end(config: ExperimentConfig, seed=0, out_dir=None, noiseless=False) -> RunResult:
    """Synthesize a sequence from the configured truth and recover alpha from it.

    Stages: synthesize, fit, estimate, unwrap, polfit, alpha.  Each stage's
    output is written under ``out_dir`` when given; the same (config, seed)
    always writes identical files.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    artifacts = {}

    with stage("velocity"):
        u = measured_velocity(config)[2]
        k_true = truth_k(config, u.value)
    with stage("synthesize"):
        truth = fringes.FringeTruth(k_true, config.truth.s_parallel, config.truth.count_rate,
                                    config.truth.visibility)
        recordings = fringes.synthesize(config.plan, truth, seed=seed, noiseless=noiseless)
        if out is not None:
            artifacts["recordings"] = fringes.write_sequence(recordings, out / "recordings")
    with stage("fit"):
        fits = fringes.fit_sequence(recordings)
        if out is not None:
            artifacts["fits"] = write_fits_csv(fits, out / "fits.csv")
    with stage("estimate"):
        scatter, vscatter = config.plan.scatter_rms, config.plan.visibility_scatter
        shifts = fringes.phase_shift_estimates(fits, scatter)
        vis = fringes.visibility_estimates(fits, vscatter)
        cov = fringes.bracket_covariance(fits, scatter, vscatter)
        dataset = polfit.PhaseShiftDataset.from_estimates(shifts, vis, cov)
        if out is not None:
            artifacts["phase_shifts"] = dataset.to_csv(out / "phase_shifts.csv")
    with stage("unwrap"):
        dataset = polfit.unwrap_by_voltage(dataset, config.initial_s_parallel)
        if out is not None:
            artifacts["unwrapped"] = dataset.to_csv(out / "phase_shifts_unwrapped.csv")
    with stage("polfit"):
        result = polfit.fit(dataset, s0=config.initial_s_parallel,
                            use_visibility=config.use_visibility)
        if out is not None:
            artifacts["polfit"] = _write_json(out / "polfit.json", result.to_dict())
            vmax = float(dataset.voltages.max())
            table = polfit.prediction_table(result, np.arange(0.0, vmax + 5.0, 5.0))
            np.savetxt(out / "prediction.csv", table, delimiter=",", fmt="%.12e", comments="",
                       header="# model prediction\nV0,phase_rad,rel_visibility")
            artifacts["prediction"] = out / "prediction.csv"
    with stage("alpha"):
        alpha = alpha_from_k(config, result.k, u)
        zero_sigmas = [f.mean_phase.sigma for f in fits if f.voltage == 0]
        per_recording = config.plan.channels * config.plan.dwell
        sensitivity = float(np.median(zero_sigmas) * math.sqrt(per_recording))
        run = RunResult(alpha=alpha, fit=result, truth_k=k_true, phase_sensitivity=sensitivity,
                        artifacts=artifacts)
        if out is not None:
            artifacts["alpha"] = out / "alpha.json"
            run.artifacts = {k: Path(v).relative_to(out).as_posix() for k, v in artifacts.items()}
            _write_json(out / "alpha.json", run.to_dict())
    return run

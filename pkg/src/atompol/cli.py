"""Command-line entry point: ``atompol <command> [options]``.

Tabular output is CSV with ``#`` metadata lines, structured output is JSON.
Any failure exits with status 1 and a message tagged with the failing stage.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import beam, capfield, fringes, laplace_oracle, pipeline, polfit, velocimetry
from .core import Measurement

log = logging.getLogger("atompol")


def _dump(payload, out, name):
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out is None:
        print(text)
    else:
        path = out / name
        path.write_text(text + "\n")
        print(path)


def _config(args):
    if args.config:
        return pipeline.ExperimentConfig.from_json(args.config)
    return pipeline.ExperimentConfig.default()


def cmd_field(args, cfg, out):
    prof = capfield.field_profile(cfg.geometry, args.voltage, ramp=args.ramp)
    path = prof.to_csv((out or Path(".")) / "field.csv")
    print(path)


def cmd_leff(args, cfg, out):
    g = cfg.geometry
    _dump({"L_exact_m": capfield.effective_length(g, "exact"),
           "L_approx_m": capfield.effective_length(g, "approx"),
           "L_offset_m": capfield.effective_length_offset(g),
           "L_offset_exact_m": capfield.effective_length_offset(g, exact=True),
           "kernel_fwhm_m": capfield.kernel_fwhm(g.mean_spacing),
           "e2_integral_V2_per_m_at_1V": capfield.e2_integral(g, 1.0)}, out, "leff.json")


def cmd_oracle(args, cfg, out):
    g = cfg.geometry
    grid = laplace_oracle.solve_potential(g, args.voltage, resolution=args.resolution)
    i0 = laplace_oracle.line_e2_integral(grid, 0.0)
    ix, snap = laplace_oracle.line_e2_integral(grid, g.septum_offset, with_snap=True)
    # the oracle has parallel plates, so compare with the untilted closed form
    analytic = capfield.e2_integral(replace(g, spacing_tilt=0.0), args.voltage)
    payload = {"resolution": args.resolution, "sweeps": grid.sweeps, "residual": grid.residual,
               "e2_septum": i0, "e2_closed_form": analytic,
               "relative_difference": i0 / analytic - 1.0,
               "e2_offset_line": ix, "offset_snap_m": snap, "offset_ratio": ix / i0 - 1.0}
    if out is not None and args.grid:
        grid.to_csv(out / "oracle_grid.csv")
    _dump(payload, out, "oracle.json")


def cmd_average(args, cfg, out):
    phi = np.linspace(args.phi_min, args.phi_max, args.points)
    vis_n, ph_n = beam.average_fringe_numeric_array(phi, args.speed_ratio)
    vis_c, ph_c = beam.average_fringe_closed_array(phi, args.speed_ratio)
    table = np.column_stack([phi, vis_n, ph_n, vis_c, ph_c])
    header = (f"# S_parallel={args.speed_ratio!r}\n"
              "phi_m,vis_numeric,phase_numeric,vis_closed,phase_closed")
    target = sys.stdout if out is None else (out / "average.csv")
    np.savetxt(target, table, delimiter=",", fmt="%.12e", header=header, comments="")
    if out is not None:
        print(target)


def cmd_synth(args, cfg, out):
    with pipeline.stage("synthesize"):
        k = pipeline.truth_k(cfg)
        truth = fringes.FringeTruth(k, cfg.truth.s_parallel, cfg.truth.count_rate,
                                    cfg.truth.visibility)
        recs = fringes.synthesize(cfg.plan, truth, seed=args.seed, noiseless=args.noiseless)
        print(fringes.write_sequence(recs, (out or Path(".")) / "recordings"))


def cmd_extract(args, cfg, out):
    with pipeline.stage("fit"):
        recs = fringes.read_sequence(args.manifest)
        fits = fringes.fit_sequence(recs)
    with pipeline.stage("estimate"):
        shifts = fringes.phase_shift_estimates(fits, cfg.plan.scatter_rms)
        vis = fringes.visibility_estimates(fits, cfg.plan.visibility_scatter)
        data = polfit.PhaseShiftDataset.from_estimates(shifts, vis)
        base = out or Path(".")
        print(pipeline.write_fits_csv(fits, base / "fits.csv"))
        print(data.to_csv(base / "phase_shifts.csv"))


def cmd_fitpol(args, cfg, out):
    with pipeline.stage("unwrap"):
        data = polfit.PhaseShiftDataset.from_csv(args.data)
        if args.phase_only:
            data = data.phases_only()
        if not args.unwrapped:
            data = polfit.unwrap_by_voltage(data, cfg.initial_s_parallel)
    with pipeline.stage("polfit"):
        result = polfit.fit(data, s0=cfg.initial_s_parallel)
        base = out or Path(".")
        table = polfit.prediction_table(result, np.arange(0.0, data.voltages.max() + 5.0, 5.0))
        np.savetxt(base / "prediction.csv", table, delimiter=",", fmt="%.12e", comments="",
                   header="# model prediction\nV0,phase_rad,rel_visibility")
        _dump(result.to_dict(), out, "polfit.json")


def cmd_velocity(args, cfg, out):
    bragg, doppler, combined = pipeline.measured_velocity(cfg)
    theory = velocimetry.supersonic_prediction(cfg.source, cfg.constants)
    base = velocimetry.supersonic_prediction(
        velocimetry.SourceConditions.pure_argon(cfg.source.nozzle_temperature), cfg.constants)
    _dump({"bragg": bragg.to_dict(), "doppler": doppler.to_dict(), "combined": combined.to_dict(),
           "supersonic_base": base.to_dict(), "supersonic_corrected": theory.to_dict()},
          out, "velocity.json")


def cmd_alpha(args, cfg, out):
    k = cfg.measured_k if args.k is None else Measurement(args.k, args.sigma_k)
    u = None if args.u is None else Measurement(args.u, args.sigma_u)
    with pipeline.stage("alpha"):
        _dump(pipeline.alpha_from_k(cfg, k, u).to_dict(), out, "alpha.json")


def cmd_run(args, cfg, out):
    result = pipeline.run_end_to_end(cfg, seed=args.seed, out_dir=out or Path("run"),
                                     noiseless=args.noiseless)
    a = result.alpha
    print(f"alpha = {a.alpha_au.value:.2f} +/- {a.alpha_au.sigma:.2f} a.u. "
          f"({a.total_relative * 100:.3f} %)")
    print(f"k = {result.fit.k}  S = {result.fit.s_parallel}  chi2/dof = {result.fit.chi2_per_dof:.2f}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment JSON (default: shipped paper.json)")
    common.add_argument("--seed", type=int, default=0, help="random seed")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="atompol", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("field", parents=[common], help="septum field profile CSV")
    p.add_argument("--voltage", type=float, default=1.0)
    p.add_argument("--ramp", choices=["linear", "smoothstep"], default="linear")
    p.set_defaults(func=cmd_field)

    p = sub.add_parser("leff", parents=[common], help="effective lengths (JSON)")
    p.set_defaults(func=cmd_leff)

    p = sub.add_parser("oracle", parents=[common], help="finite-difference cross-check")
    p.add_argument("--voltage", type=float, default=1.0)
    p.add_argument("--resolution", type=int, default=40)
    p.add_argument("--grid", action="store_true", help="also write the potential grid CSV")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("average", parents=[common], help="velocity-averaged fringe table")
    p.add_argument("--speed-ratio", type=float, default=8.0)
    p.add_argument("--phi-min", type=float, default=0.0)
    p.add_argument("--phi-max", type=float, default=25.0)
    p.add_argument("--points", type=int, default=101)
    p.set_defaults(func=cmd_average)

    p = sub.add_parser("synth", parents=[common], help="synthesize a recording sequence")
    p.add_argument("--noiseless", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", parents=[common], help="fit recordings, estimate phase shifts")
    p.add_argument("manifest", type=Path)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("fitpol", parents=[common], help="fit k and S to a phase-shift CSV")
    p.add_argument("data", type=Path)
    p.add_argument("--phase-only", action="store_true", help="ignore visibility columns")
    p.add_argument("--unwrapped", action="store_true", help="phases are already unwrapped")
    p.set_defaults(func=cmd_fitpol)

    p = sub.add_parser("velocity", parents=[common], help="velocity estimates (JSON)")
    p.set_defaults(func=cmd_velocity)

    p = sub.add_parser("alpha", parents=[common], help="polarizability from k (JSON)")
    p.add_argument("--k", type=float, help="phi_m / V0^2 in rad/V^2 (default: config)")
    p.add_argument("--sigma-k", type=float, default=0.0)
    p.add_argument("--u", type=float, help="velocity in m/s (default: measured)")
    p.add_argument("--sigma-u", type=float, default=0.0)
    p.set_defaults(func=cmd_alpha)

    p = sub.add_parser("run", parents=[common], help="end-to-end synthetic run")
    p.add_argument("--noiseless", action="store_true")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with pipeline.stage("config"):
            cfg = _config(args)
            out = args.out
            if out is not None:
                out.mkdir(parents=True, exist_ok=True)
        with pipeline.stage(args.command):
            args.func(args, cfg, out)
    except pipeline.PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

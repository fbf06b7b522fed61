"""Time the numba kernels against their numpy fallbacks.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--resolution 40]

Each kernel is called once untimed so numba compilation is excluded, then the
best of ``--repeat`` runs is reported for both backends along with the largest
difference between their outputs.
"""
import argparse
import time

import numpy as np

from atompol import _accel
from atompol.beam import average_fringe_numeric_array
from atompol.capfield import CapacitorGeometry
from atompol.laplace_oracle import solve_potential


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def run_backend(use_numba, args):
    _accel.USE_NUMBA = use_numba
    geometry = CapacitorGeometry(half_length=args.half_length, mean_spacing=2.056e-3)
    phi = np.linspace(0.0, 25.0, args.points)
    t_sor, grid = best_of(lambda: solve_potential(geometry, 1.0, resolution=args.resolution),
                          args.repeat)
    t_gh, (vis, _) = best_of(lambda: average_fringe_numeric_array(phi, 8.0), args.repeat)
    return {"sor": (t_sor, grid.potential), "gauss_hermite": (t_gh, vis)}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--resolution", type=int, default=40, help="SOR nodes per spacing")
    p.add_argument("--half-length", type=float, default=10e-3, help="electrode half-length (m)")
    p.add_argument("--points", type=int, default=20000, help="phases in the averaged table")
    args = p.parse_args(argv)

    if not _accel.HAS_NUMBA:
        print("numba unavailable; only the numpy backend can be timed")
    results = {"numpy": run_backend(False, args)}
    if _accel.HAS_NUMBA:
        results["numba"] = run_backend(True, args)

    print(f"{'kernel':<15}{'numpy (s)':>12}{'numba (s)':>12}{'speedup':>10}{'max diff':>12}")
    for name in ("sor", "gauss_hermite"):
        t_np, out_np = results["numpy"][name]
        if "numba" in results:
            t_nb, out_nb = results["numba"][name]
            diff = float(np.max(np.abs(out_np - out_nb)))
            print(f"{name:<15}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>10.1f}{diff:>12.2e}")
        else:
            print(f"{name:<15}{t_np:>12.4f}{'-':>12}{'-':>10}{'-':>12}")


if __name__ == "__main__":
    main()

"""Time the numba kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--size 120] [--repeat 3]

Each workload runs once per backend to warm up (numba compiles there), then
the best of ``--repeat`` timings is reported.  Outputs of the two backends
are compared so a speedup never hides a divergence.
"""

import argparse
import time

import numpy as np

from streamcal import _accel
from streamcal.hydromodel import ParameterSet, simulate
from streamcal.pipeline import synth_dem, synth_forcing
from streamcal.terrain import route_grid


def terrain_workload(size):
    dem = synth_dem(np.random.default_rng(0), size, size, relief=0.3)

    def run():
        filled, flow = route_grid(dem)
        return flow.accumulation

    return run


def model_workload(size):
    rng = np.random.default_rng(1)
    filled, flow = route_grid(synth_dem(rng, size, size))
    forcing = synth_forcing(rng, "2010-01-01", "2011-12-31")
    outlet = (size - 1, size // 2)

    def run():
        out = simulate(forcing, ParameterSet(), flow, {"outlet": outlet}, ("2011-01-01", "2011-12-31"),
                       dem=filled, spinup_years=1)
        return out["outlet"].values

    return run


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=120, help="terrain grid side length")
    ap.add_argument("--model-size", type=int, default=30, help="model grid side length")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    workloads = {
        f"route_grid {args.size}x{args.size}": terrain_workload(args.size),
        f"simulate 1 yr {args.model_size}x{args.model_size}": model_workload(args.model_size),
    }
    previous = _accel.backend()
    print(f"{'workload':32s} {'numba s':>10s} {'numpy s':>10s} {'speedup':>8s}  same")
    try:
        for name, fn in workloads.items():
            timings, results = {}, {}
            for backend in ("numba", "numpy"):
                _accel.set_backend(backend)
                results[backend] = fn()
                timings[backend] = best_time(fn, args.repeat)
            same = np.allclose(results["numba"], results["numpy"], rtol=1e-9, atol=1e-12)
            print(f"{name:32s} {timings['numba']:10.4f} {timings['numpy']:10.4f} "
                  f"{timings['numpy'] / timings['numba']:8.1f}x  {same}")
    finally:
        _accel.set_backend(previous)


if __name__ == "__main__":
    main()

"""Compare the compiled and pure-Python propagation kernels.

Both backends run the same disturbed simulation; the script checks that they
agree and reports the best-of-``repeat`` wall time per backend.

    python benchmarks/bench_kernels.py [--samples 20000] [--repeat 5]
"""
import argparse
import time

import numpy as np

from somiv import kernels
from somiv.sim import InputDesign, design_input
from somiv.vessel import TRUE_VALUES


def _inputs(n, seed=0):
    rng = np.random.default_rng(seed)
    tau = design_input(InputDesign(), n, seed=seed)
    current = 0.2 + np.sqrt(1e-3) * rng.standard_normal((n, 2))
    wind = 1.0 + np.sqrt(1e-3) * rng.standard_normal((n, 2))
    return tau, current, wind


def best_time(backend, args, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = kernels.simulate_ship(TRUE_VALUES, np.zeros(3), 0.0, *args, backend=backend)
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--samples", type=int, default=20000)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)

    inputs = _inputs(args.samples)
    t_py, (nu_py, eta_py) = best_time("python", inputs, args.repeat)
    print(f"default backend: {kernels.BACKEND}")
    print(f"python  {args.samples:>8d} steps  {t_py * 1e3:9.2f} ms")
    try:
        t_cy, (nu_cy, eta_cy) = best_time("cython", inputs, args.repeat)
    except ImportError:
        print("cython  not built")
        return 0
    diff = max(np.max(np.abs(nu_cy - nu_py)), np.max(np.abs(eta_cy - eta_py)))
    print(f"cython  {args.samples:>8d} steps  {t_cy * 1e3:9.2f} ms")
    print(f"speedup {t_py / t_cy:.1f}x, max abs difference {diff:.3g}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

"""Compare the compiled and pure-Python nested-integral kernels.

Usage: python benchmarks/bench_kernels.py [--n 5] [--m 10] [--repeat 3] [--tol 1e-5]

Both backends evaluate all three rule matrices for the same parameter set;
the script reports the best wall time of each and the largest difference
between their outputs.
"""

import argparse
import time

import numpy as np

from vdrating import kernels
from vdrating.kernels import R1_ABOVE, R2_BELOW, R3_ABOVE, R3_BELOW
from vdrating.model import symmetric_params
from vdrating.quadrature import QuadConfig

KINDS = (R1_ABOVE, R2_BELOW, R3_ABOVE, R3_BELOW)


def best_time(backend, theta, cfg, repeat):
    args = (theta.rep_means, theta.rep_sds, theta.crit_means, theta.crit_sds, KINDS,
            cfg.rel_tol, cfg.abs_tol, cfg.min_refinements, cfg.max_refinements,
            cfg.tail_cutoff_sigmas)
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = backend.terms(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out[0]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=5, help="stimuli")
    ap.add_argument("--m", type=int, default=10, help="response categories")
    ap.add_argument("--repeat", type=int, default=3, help="timed repetitions per backend")
    ap.add_argument("--tol", type=float, default=1e-5, help="quadrature relative tolerance")
    a = ap.parse_args(argv)

    theta = symmetric_params(a.n, a.m)
    # unequal SDs so no two components share a window
    theta.rep_sds *= np.linspace(0.7, 1.3, a.n)
    theta.crit_sds *= np.linspace(0.6, 1.4, a.m - 1)
    cfg = QuadConfig(rel_tol=a.tol)

    t_py, v_py = best_time(kernels.python_backend, theta, cfg, a.repeat)
    print(f"python    {t_py:9.4f} s")
    if kernels.compiled_backend is None:
        print("compiled  not built (run: python setup.py build_ext --inplace)")
        return
    t_c, v_c = best_time(kernels.compiled_backend, theta, cfg, a.repeat)
    print(f"compiled  {t_c:9.4f} s")
    print(f"speed-up  {t_py / t_c:9.1f} x")
    print(f"max |difference| {np.abs(v_py - v_c).max():.2e}")


if __name__ == "__main__":
    main()

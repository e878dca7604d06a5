"""Wall-clock comparison of the compiled and pure-numpy hot kernels.

Run ``python benchmarks/bench_kernels.py [--n 2000] [--repeat 3]``.  Both
twins are called directly, so the result does not depend on
``THRESHSPLIT_DISABLE_NUMBA``.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from threshsplit import inference, local_threshold as lt, simulation
from threshsplit.data import make_eval_window
from threshsplit.simulation import SimConfig, gen_dgp, rng_stream


def _best(fn, repeat):
    fn()  # warm-up (includes compilation for the numba twin)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--grid", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    data, _ = gen_dgp(SimConfig(n=args.n, delta=4.0, reps=1), rng_stream(0, 0))
    window = make_eval_window(data, 0.7, args.grid)
    order, Xs, ys, qs, ss = lt._sorted_view(data)
    lo, hi = lt.trim_bounds(data.q)
    b_n = lt.bandwidth_from_c(0.5, data.n)
    curve_args = (Xs, ys, qs, ss, window.grid, b_n, 0, lo, hi, data.d, lt.WEIGHT_FLOOR * 0.3989422804014327, -1)

    rng = np.random.default_rng(1)
    G = rng.standard_normal((args.n, 4))
    C = np.sort(rng.uniform(0, np.sqrt(args.n), (args.n, 2)) * 4, axis=0)

    K = 2000
    inc = rng.standard_normal((500, K)) * np.sqrt(0.05)
    unif = 1.0 - rng.random((500, K))
    drift = -np.arange(K + 1) * 0.05
    cases = {
        f"threshold curve (n={args.n}, {args.grid} points)": (
            lambda: lt._curve_nb(*curve_args), lambda: lt._curve_np(*curve_args)),
        f"spatial LRV (n={args.n}, p=4, lag 5)": (
            lambda: inference._conley_nb(G, C, 5.0, 0), lambda: inference._conley_np(G, C, 5.0, 0)),
        "path maxima (500 paths x 2x2000 steps)": (
            lambda: simulation._path_extreme_nb(inc, inc, 2.0, drift, unif, unif, 0.2),
            lambda: simulation._path_extreme_np(inc, inc, 2.0, drift, unif, unif, 0.2)),
    }
    print(f"{'kernel':48s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s}")
    for name, (f_nb, f_np) in cases.items():
        t_nb = _best(f_nb, args.repeat)
        t_np = _best(f_np, args.repeat)
        print(f"{name:48s} {t_nb:10.4f} {t_np:10.4f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()

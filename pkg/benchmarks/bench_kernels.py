"""Time the numba kernels against their pure-numpy twins.

    python3 benchmarks/bench_kernels.py [--points 32] [--repeat 5]

Reports the best-of-N wall time for each kernel on a points^3 grid and
checks that both backends agree.
"""

import argparse
import time

import numpy as np

from pcurve import _accel
from pcurve.mpoly import subset_table
from pcurve.pde import stencil_offsets


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--points", type=int, default=32, help="grid points per axis")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--n", type=int, default=3)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not available (or NUMBA_DISABLE_JIT is set)")

    rng = np.random.default_rng(0)
    n, N = args.n, args.points ** args.n
    lam = rng.uniform(0.5, 2.0, (N, n))
    a = rng.standard_normal((N, n, n))
    a = a + a.transpose(0, 2, 1)
    b = rng.standard_normal((N, n))
    c = rng.standard_normal(N)
    h = np.full(n, 2 * np.pi / args.points)
    offs = stencil_offsets(n)

    print(f"grid {args.points}^{n} = {N} points, best of {args.repeat}")
    print(f"{'kernel':<22}{'p':>3}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>9}{'max diff':>11}")
    cases = []
    for p in range(1, n + 1):
        members = np.asarray(subset_table(n, p))
        cases.append(("subset_terms", p, lambda m=members: _accel.subset_terms_numpy(lam, m),
                      lambda m=members: _accel.subset_terms_numba(lam, m)))
    cases.append(("stencil_values", "-", lambda: _accel.stencil_values_numpy(a, b, c, h, offs),
                  lambda: _accel.stencil_values_numba(a, b, c, h, offs)))
    for name, p, f_np, f_nb in cases:
        f_nb()  # compile / load cache
        r_np, r_nb = f_np(), f_nb()
        r_np = r_np if isinstance(r_np, tuple) else (r_np,)
        r_nb = r_nb if isinstance(r_nb, tuple) else (r_nb,)
        diff = max(float(np.nanmax(np.abs(x - y))) for x, y in zip(r_np, r_nb))
        t_np, t_nb = best_of(f_np, args.repeat), best_of(f_nb, args.repeat)
        print(f"{name:<22}{p!s:>3}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>9.1f}{diff:>11.1e}")


if __name__ == "__main__":
    main()

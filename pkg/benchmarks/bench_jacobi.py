"""Time the numba and pure-numpy Jacobi kernels on the same inputs.

    python3 benchmarks/bench_jacobi.py [--sizes 8 16 32 64] [--repeat 5]

Both kernels get identical copies; the script also reports the largest
singular-value disagreement between them.
"""

import argparse
import math
import time

import numpy as np

from pesokit.linalg import _jacobi


def _run(kernel, a, repeat):
    best = math.inf
    out = None
    for _ in range(repeat):
        w = np.array(a.T, order="C", copy=True)
        v = np.eye(a.shape[1])
        t0 = time.perf_counter()
        kernel(w, v, max(math.sqrt(a.shape[0]), 2.0) * np.finfo(float).eps, 60)
        best = min(best, time.perf_counter() - t0)
        out = np.sort(np.linalg.norm(w, axis=1))[::-1]
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[8, 16, 32, 64])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    if _jacobi.jacobi_sweeps_numba is None:
        print("numba unavailable (or PESOKIT_DISABLE_NUMBA set); timing the numpy kernel only")
    rng = np.random.default_rng(0)
    print(f"{'n':>5} {'numpy_ms':>10} {'numba_ms':>10} {'speedup':>8} {'max_sigma_diff':>15}")
    for n in args.sizes:
        a = rng.standard_normal((n, n))
        t_np, s_np = _run(_jacobi.jacobi_sweeps_numpy, a, args.repeat)
        if _jacobi.jacobi_sweeps_numba is None:
            print(f"{n:>5} {t_np * 1e3:>10.3f} {'-':>10} {'-':>8} {'-':>15}")
            continue
        _run(_jacobi.jacobi_sweeps_numba, a, 1)  # compile / load cache outside the timing
        t_nb, s_nb = _run(_jacobi.jacobi_sweeps_numba, a, args.repeat)
        diff = float(np.abs(s_np - s_nb).max() / s_np[0])
        print(f"{n:>5} {t_np * 1e3:>10.3f} {t_nb * 1e3:>10.3f} {t_np / t_nb:>8.1f} {diff:>15.2e}")


if __name__ == "__main__":
    main()

"""Compare the numba kernels with their pure-numpy fallbacks.

    python benchmarks/bench_kernels.py [--hidden 64 256] [--length 300] [--repeat 5]
"""

import argparse
import time

import numpy as np

from mttppi import _kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_scan(hidden, length, repeat, rng):
    xm = rng.normal(size=(length, hidden))
    xg = rng.normal(size=(length, 4 * hidden))
    w_mh = rng.normal(size=(hidden, hidden)) / np.sqrt(hidden)
    w_gm = rng.normal(size=(4 * hidden, hidden)) / np.sqrt(hidden)
    args = (xm, xg, w_mh, w_gm)
    _kernels.mlstm_scan_numba(*args)  # compile
    diff = np.max(np.abs(_kernels.mlstm_scan_numba(*args) - _kernels.mlstm_scan_numpy(*args)))
    t_np = best_of(lambda: _kernels.mlstm_scan_numpy(*args), repeat)
    t_nb = best_of(lambda: _kernels.mlstm_scan_numba(*args), repeat)
    return t_np, t_nb, diff


def bench_scatter(rows, n, dim, repeat, rng):
    idx = rng.integers(0, rows, size=n)
    vals = rng.normal(size=(n, dim))
    _kernels.scatter_add_rows_numba(np.zeros((rows, dim)), idx, vals)
    diff = np.max(np.abs(_kernels.scatter_add_rows_numba(np.zeros((rows, dim)), idx, vals)
                         - _kernels.scatter_add_rows_numpy(np.zeros((rows, dim)), idx, vals)))
    t_np = best_of(lambda: _kernels.scatter_add_rows_numpy(np.zeros((rows, dim)), idx, vals), repeat)
    t_nb = best_of(lambda: _kernels.scatter_add_rows_numba(np.zeros((rows, dim)), idx, vals), repeat)
    return t_np, t_nb, diff


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--hidden", type=int, nargs="+", default=[64, 256, 1900])
    ap.add_argument("--length", type=int, default=300)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels.mlstm_scan_numba is None:
        raise SystemExit("numba is not importable; nothing to compare")
    rng = np.random.default_rng(0)

    print(f"{'kernel':<28}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}{'max diff':>12}")
    for h in args.hidden:
        t_np, t_nb, d = bench_scan(h, args.length, args.repeat, rng)
        name = f"mlstm_scan H={h} L={args.length}"
        print(f"{name:<28}{t_np * 1e3:>12.2f}{t_nb * 1e3:>12.2f}{t_np / t_nb:>9.1f}x{d:>12.1e}")
    for rows, n, dim in [(8000, 256, 64), (8000, 4096, 1900)]:
        t_np, t_nb, d = bench_scatter(rows, n, dim, args.repeat, rng)
        name = f"scatter_add n={n} D={dim}"
        print(f"{name:<28}{t_np * 1e3:>12.2f}{t_nb * 1e3:>12.2f}{t_np / t_nb:>9.1f}x{d:>12.1e}")


if __name__ == "__main__":
    main()

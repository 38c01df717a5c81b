"""Benchmark the compiled kernels against the pure-numpy fallback.

Run:  python3 benchmarks/kernel_benchmark.py
"""

import time

import numpy as np

from nimslam.kernels import available_backends


def _time(fn, *args, repeats=7):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    # Sizes representative of one optimization iteration at |M|=3000:
    # ~28k rays x 96 samples through 6 grid levels.
    n = 300_000
    dims = (64, 52, 40, 1)
    values = np.ascontiguousarray(rng.normal(size=dims))
    base = np.stack([rng.integers(0, d - 1, n) for d in dims[:3]], axis=1).astype(np.int64)
    base = np.ascontiguousarray(base)
    frac = np.ascontiguousarray(rng.random((n, 3)))
    gout = np.ascontiguousarray(rng.normal(size=(n, 1)))

    img = np.ascontiguousarray(rng.random((480, 640, 3)))
    x = np.ascontiguousarray(rng.uniform(0, 639, n))
    y = np.ascontiguousarray(rng.uniform(0, 479, n))
    gimg = np.ascontiguousarray(rng.normal(size=(n, 3)))

    backends = available_backends()
    print(f"backends available: {', '.join(backends)}   (n = {n:,} points)")
    rows = []
    for name, impl in sorted(backends.items()):
        grad = np.zeros_like(values)
        t_gather = _time(impl.tri_gather, values, base, frac)
        t_pos = _time(impl.tri_gather_posgrad, values, base, frac, gout)
        t_scatter = _time(impl.tri_scatter_add, grad, base, frac, gout)
        t_bil = _time(impl.bilinear_gather, img, x, y)
        t_bilg = _time(impl.bilinear_posgrad, img, x, y, gimg)
        rows.append((name, t_gather, t_pos, t_scatter, t_bil, t_bilg))

    header = f"{'backend':<8} {'tri_gather':>11} {'tri_posgrad':>12} {'tri_scatter':>12} {'bilinear':>10} {'bilin_grad':>11}"
    print(header)
    print("-" * len(header))
    for name, *ts in rows:
        print(f"{name:<8} " + " ".join(f"{t * 1e3:>10.2f}ms" for t in ts))
    if len(rows) == 2:
        by_name = {r[0]: r[1:] for r in rows}
        labels = ["tri_gather", "tri_posgrad", "tri_scatter", "bilinear", "bilin_grad"]
        print("speedup (python / native): " + ", ".join(
            f"{k}={p / n:.0f}x" for k, p, n in
            zip(labels, by_name["python"], by_name["native"])))


if __name__ == "__main__":
    main()

"""Compare the numba and pure-numpy kernel backends.

Times the fused selective scan (forward and backward) and the radix-2 FFT
on each available backend, checks that both backends return the same
numbers, and prints one table row per (kernel, size).

    python benchmarks/bench_backends.py [--repeats 5] [--quick]
"""
import argparse
import statistics
import time

import numpy as np

from echomamba import fft, kernels


def _median_time(fn, repeats):
    fn()  # warm-up, includes jit compilation on the numba path
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def scan_inputs(batch, length, d_inner, d_state, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(batch, length, d_inner))
    delta = rng.uniform(1e-3, 1e-1, size=(batch, length, d_inner))
    a = -np.tile(np.arange(1, d_state + 1, dtype=float), (d_inner, 1))
    b = rng.normal(size=(batch, length, d_state))
    c = rng.normal(size=(batch, length, d_state))
    d = np.ones(d_inner)
    dy = rng.normal(size=x.shape)
    return x, delta, a, b, c, d, dy


def bench_scan(name, shape, repeats):
    x, delta, a, b, c, d, dy = scan_inputs(*shape)
    rows, outs = [], {}
    for be in kernels.available():
        with kernels.use_backend(be):
            fwd = _median_time(lambda: kernels.scan_forward(x, delta, a, b, c, d, True, False), repeats)
            _, saved = kernels.scan_forward(x, delta, a, b, c, d, True, True)
            bwd = _median_time(lambda: kernels.scan_backward(dy, x, delta, a, b, c, d, True, saved),
                               repeats)
            y, _ = kernels.scan_forward(x, delta, a, b, c, d, True, False)
            outs[be] = (y,) + tuple(kernels.scan_backward(dy, x, delta, a, b, c, d, True, saved))
        rows.append((f"{name} fwd", be, fwd))
        rows.append((f"{name} bwd", be, bwd))
    return rows, _max_rel_diff(outs)


def bench_fft(n, rows_count, repeats):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(rows_count, n)) + 1j * rng.normal(size=(rows_count, n))
    rows, outs = [], {}
    for be in kernels.available():
        with kernels.use_backend(be):
            t = _median_time(lambda: fft.fft(x, method="radix2"), repeats)
            outs[be] = (fft.fft(x, method="radix2"),)
        rows.append((f"fft n={n} x{rows_count}", be, t))
    return rows, _max_rel_diff(outs)


def _max_rel_diff(outs):
    if len(outs) < 2:
        return float("nan")
    ref, other = outs["numpy"], outs["numba"]
    return max(float(np.abs(p - q).max() / max(np.abs(p).max(), 1e-300)) for p, q in zip(ref, other))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--quick", action="store_true", help="small sizes only")
    args = parser.parse_args(argv)

    scan_shapes = [("scan B8 L256 Di64 N16", (8, 256, 64, 16))]
    fft_sizes = [(256, 512)]
    if not args.quick:
        scan_shapes.append(("scan B8 L2048 Di64 N16", (8, 2048, 64, 16)))
        fft_sizes.append((4096, 256))

    print(f"backends: {', '.join(kernels.available())}")
    print(f"{'kernel':<28} {'backend':<8} {'median s':>10} {'speedup':>8}")
    for label, shape in scan_shapes:
        rows, diff = bench_scan(label, shape, args.repeats)
        _print(rows, diff)
    for n, count in fft_sizes:
        rows, diff = bench_fft(n, count, args.repeats)
        _print(rows, diff)


def _print(rows, diff):
    base = {k: t for k, be, t in rows if be == "numpy"}
    for kernel, be, t in rows:
        print(f"{kernel:<28} {be:<8} {t:>10.4f} {base[kernel] / t:>7.1f}x")
    print(f"{'':<28} max relative difference between backends: {diff:.2e}")


if __name__ == "__main__":
    main()

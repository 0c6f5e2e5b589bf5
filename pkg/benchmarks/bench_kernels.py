"""Timing comparison of the numba and numpy kernel backends.

Run with ``python3 benchmarks/bench_kernels.py``. Shapes mirror a
realistic training batch (64 windows, 32 channels, 170 nodes) plus the
desk-scale fixture used in the tests.
"""

import time

import numpy as np

from bgcnet import kernels


def bench(fn, *args, repeats=5, warmup=2):
    for _ in range(warmup):
        fn(*args)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def make_case(b, c, n, t, dilation=2, dim=16, seed=0):
    rng = np.random.default_rng(seed)
    return {
        "x": rng.normal(size=(b, c, n, t)),
        "w0": rng.normal(size=(c, c)),
        "w1": rng.normal(size=(c, c)),
        "b": rng.normal(size=c),
        "g": rng.normal(size=(n, n)),
        "dy_conv": rng.normal(size=(b, c, n, t - dilation)),
        "dy_mix": rng.normal(size=(b, c, n, t)),
        "emb": rng.normal(size=(n, dim)),
        "dilation": dilation,
    }


def run_case(label, case):
    d = case["dilation"]
    rows = [
        ("pairwise_sq_dists", (kernels.pairwise_sq_dists_nb,
                               kernels.pairwise_sq_dists_np),
         (case["emb"],)),
        ("time_conv_k2", (kernels.time_conv_k2_nb, kernels.time_conv_k2_np),
         (case["x"], case["w0"], case["w1"], case["b"], d)),
        ("time_conv_k2_backward", (kernels.time_conv_k2_backward_nb,
                                   kernels.time_conv_k2_backward_np),
         (case["x"], case["w0"], case["w1"], d, case["dy_conv"])),
        ("graph_mix", (kernels.graph_mix_nb, kernels.graph_mix_np),
         (case["g"], case["x"])),
        ("graph_mix_grad", (kernels.graph_mix_grad_nb, kernels.graph_mix_grad_np),
         (case["dy_mix"], case["x"])),
    ]
    print(f"\n{label}")
    print(f"{'kernel':24s} {'numba':>10s} {'numpy':>10s} {'speedup':>8s}")
    for name, (fn_nb, fn_np), args in rows:
        t_nb = bench(fn_nb, *args)
        t_np = bench(fn_np, *args)
        print(f"{name:24s} {t_nb * 1e3:9.2f}ms {t_np * 1e3:9.2f}ms "
              f"{t_np / t_nb:7.2f}x")


def main():
    if not kernels._HAVE_NUMBA:
        raise SystemExit("numba backend unavailable; nothing to compare")
    run_case("desk scale (B=64, C=8, N=20, T=24)", make_case(64, 8, 20, 24))
    run_case("deployment scale (B=64, C=32, N=170, T=13)",
             make_case(64, 32, 170, 13))


if __name__ == "__main__":
    main()

"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

The numba functions are warmed up once before timing so JIT compilation is
not counted.  Outputs are cross-checked before anything is timed.
"""

import argparse
import timeit

import numpy as np

from botuq.engine import kernels


def cases(rng):
    # inference inner loop: one weight draw over a batch, 256 noise samples
    n, m = 4096, 256
    f = rng.normal(0.0, 2.0, n)
    sigma = np.exp(rng.normal(-1.0, 0.5, n))
    eps = rng.standard_normal(m)
    yield "noise_moments 4096x256", kernels.noise_moments_numpy, kernels.noise_moments_numba, (f, sigma, eps)

    # ROC band: 600 accounts x 1000 draws on a 600-point grid; the dispatcher
    # includes the transpose the numba path needs
    scores = rng.random((600, 1000))
    labels = (rng.random(600) < 0.5).astype(np.int64)
    grid = np.r_[np.inf, np.unique(scores.mean(axis=1))[::-1]]
    yield "roc_counts 600x1000", kernels.roc_counts_numpy, kernels.roc_counts, (scores, labels, grid)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not kernels.HAS_NUMBA:
        raise SystemExit("numba not installed; nothing to compare")
    if not kernels.USE_NUMBA:
        raise SystemExit("numba disabled via BOTUQ_DISABLE_NUMBA; unset it to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, f_np, f_nb, a in cases(rng):
        ref, got = f_np(*a), f_nb(*a)
        for r, g in zip(ref, got):
            np.testing.assert_allclose(g, r, rtol=1e-12, atol=1e-12)
        t_np = min(timeit.repeat(lambda: f_np(*a), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: f_nb(*a), number=1, repeat=args.repeat))
        print(f"{name:<26}{1e3 * t_np:>10.2f}{1e3 * t_nb:>10.2f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()

"""Compare the compiled contrastive kernel against the pure-Python fallback.

Times ``contrastive_terms`` (forward value + cosine-matrix gradient) on a
grid of batch sizes and checks that both backends agree numerically.

Usage: python3 benchmarks/bench_kernels.py [--repeats 50]
"""

import argparse
import time

import numpy as np

from adacon import _kernels_py

try:
    from adacon import _ckernels
except ImportError:
    _ckernels = None


def make_case(rng, b, d=128):
    z = rng.standard_normal((b, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    cos = z @ z.T
    ids = np.repeat(np.arange(max(1, b // 8)), 8)[:b]
    pos = (ids[:, None] == ids[None, :]).astype(np.float64)
    np.fill_diagonal(pos, 0.0)
    margins = rng.uniform(0, 2, (b, b))
    np.fill_diagonal(margins, 0.0)
    return cos, margins, pos


def bench(module, cases, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        for cos, margins, pos in cases:
            module.contrastive_terms(cos, margins, pos, 10.0)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=50)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'batch':>6} {'python':>12} {'cython':>12} {'speedup':>8}")
    for b in (16, 64, 128, 256, 512):
        cases = [make_case(rng, b) for _ in range(5)]
        t_py = bench(_kernels_py, cases, args.repeats)
        if _ckernels is None:
            print(f"{b:>6} {t_py * 1e3:>10.3f}ms {'(unavailable)':>12}")
            continue
        t_cy = bench(_ckernels, cases, args.repeats)
        for cos, margins, pos in cases:
            pa, ga, sa = _kernels_py.contrastive_terms(cos, margins, pos, 10.0)
            pb, gb, sb = _ckernels.contrastive_terms(cos, margins, pos, 10.0)
            assert sa == sb
            assert np.allclose(pa, pb, rtol=1e-12, atol=1e-12)
            assert np.allclose(ga, gb, rtol=1e-12, atol=1e-12)
        print(f"{b:>6} {t_py * 1e3:>10.3f}ms {t_cy * 1e3:>10.3f}ms "
              f"{t_py / t_cy:>7.2f}x")
    print("backends agree to 1e-12 on all cases")


if __name__ == "__main__":
    main()

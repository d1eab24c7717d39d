"""Time the compiled kernels against their NumPy twins.

    python benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Prints one row per kernel with the best-of-N wall time for each backend
and the speedup. The end-to-end rows time the public solvers with the
backend swapped underneath them.
"""

import argparse
import timeit

import numpy as np

from perturbed_lth import _pykernels as py
from perturbed_lth import kernels, subsetsum, theory

try:
    from perturbed_lth import _ckernels as ck
except ImportError:
    ck = None


def _intervals(rng, n):
    lo = np.sort(rng.uniform(-0.5, 0.5, n))
    return lo, lo + rng.exponential(0.01, n)


def cases(scale: float):
    rng = np.random.default_rng(0)
    n = max(10, int(200_000 * scale))
    lo, hi = _intervals(rng, n)
    yield "merge_sorted", lambda k: k.merge_sorted(lo, hi, 1e-12)

    hs, hc = subsetsum.half_sums(rng.uniform(-1, 1, 10))
    ls, lc = subsetsum.half_sums(rng.uniform(-1, 1, 10))
    yield "best_mask", lambda k: k.best_mask(hs, hc, ls, lc, 0.2, 0.01)

    a = np.sort(rng.uniform(-5, 5, n))
    b = np.sort(rng.uniform(-5, 5, n))
    yield "closest_pair", lambda k: k.closest_pair(a, b, 0.3)

    g_lo, g_hi = _intervals(rng, 2000)
    c_lo, c_hi = _intervals(rng, 500)
    shifts = rng.uniform(-1, 1, max(10, int(2000 * scale)))
    yield "overlap_per_shift", lambda k: k.overlap_per_shift(g_lo, g_hi, c_lo, c_hi, shifts)


def end_to_end(scale: float):
    rng = np.random.default_rng(1)
    cands = subsetsum.CandidateSet(rng.uniform(-1, 1, 22), 0.01)
    yield "solve_meet_in_middle(n=22)", lambda: subsetsum.solve_meet_in_middle(cands, 0.123)
    vals = rng.uniform(-1, 1, 40)
    yield "min_prefix(n<=40)", lambda: subsetsum.min_prefix(vals, 0.001, 0.001, 0.31)
    state = theory.surrogate_init(0.1, 0.05)
    for x in rng.uniform(-1, 1, 12):
        state = theory.surrogate_step(state, float(x))
    draws = max(1000, int(20_000 * scale))
    yield f"expected_growth_check({draws})", lambda: theory.expected_growth_check(state, draws, seed=0)


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def _swap(module):
    # callers look kernels up as module attributes at call time
    for name in ("merge_sorted", "best_mask", "closest_pair", "overlap_per_shift"):
        setattr(kernels, name, getattr(module, name))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0, help="multiplier on input sizes")
    args = ap.parse_args(argv)
    if ck is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return 1
    print(f"{'kernel':32s} {'cython [ms]':>12s} {'python [ms]':>12s} {'speedup':>8s}")
    for name, fn in cases(args.scale):
        tc = best(lambda: fn(ck), args.repeat)
        tp = best(lambda: fn(py), args.repeat)
        print(f"{name:32s} {1e3 * tc:12.3f} {1e3 * tp:12.3f} {tp / tc:8.1f}x")
    for name, fn in end_to_end(args.scale):
        _swap(ck)
        tc = best(fn, args.repeat)
        _swap(py)
        tp = best(fn, args.repeat)
        print(f"{name:32s} {1e3 * tc:12.3f} {1e3 * tp:12.3f} {tp / tc:8.1f}x")
    _swap(ck)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

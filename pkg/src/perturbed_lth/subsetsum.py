"""Solvers for the eps-perturbed subset-sum problem.

Given candidates ``x_1..x_n``, a perturbation scale ``eps`` and a target
``z``, find a selection mask and perturbations ``|y_i| <= eps`` minimizing
``|sum_i mask_i (x_i + y_i) - z|``.

For a fixed mask the inner problem has a closed form: with ``k`` selected
candidates and residual ``r = z - sum of selected x``, the optimal error is
``max(0, |r| - k*eps)``. Everything below reduces to a search over masks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .intervals import IntervalUnion, WINDOW, _from_arrays, dilate, intersect_window, measure, union

EXACT_MAX_N = 30
MITM_MAX_N = 48
ACHIEVABLE_MAX_N = 24
# above this size solve_auto prefers meet-in-the-middle over full enumeration
_AUTO_EXACT_N = 22


class InstanceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class CandidateSet:
    values: tuple[float, ...]
    eps: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not math.isfinite(self.eps) or self.eps < 0:
            raise ValueError(f"eps must be finite and >= 0, got {self.eps}")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("candidate values must be finite")

    def __len__(self):
        return len(self.values)

    def prefix(self, n: int) -> "CandidateSet":
        return CandidateSet(self.values[:n], self.eps)


@dataclass(frozen=True)
class PerturbedSolution:
    mask: tuple[int, ...]
    perturbations: tuple[float, ...]
    error: float

    @property
    def selected(self) -> int:
        return sum(self.mask)

    def achieved(self, values: Sequence[float]) -> float:
        return float(sum(m * (x + y) for m, x, y in zip(self.mask, values, self.perturbations)))

    def recompute_error(self, values: Sequence[float], z: float) -> float:
        return abs(self.achieved(values) - z)


@dataclass(frozen=True)
class MinNResult:
    eta: float
    eps: float
    min_n: int
    trials: int
    successes_required: int
    seed: int
    found: bool = True
    per_trial: tuple[int, ...] = field(default=(), compare=False)


def _witness(values: Sequence[float], mask: Sequence[int], eps: float, z: float) -> tuple[float, list[float]]:
    k = int(sum(mask))
    if k == 0:
        return abs(z), [0.0] * len(values)
    r = z - math.fsum(x for x, m in zip(values, mask) if m)
    step = min(max(r / k, -eps), eps)
    y = [step if m else 0.0 for m in mask]
    return max(0.0, abs(r) - k * eps), y


def optimal_error_for_mask(values, mask, eps: float, z: float) -> tuple[float, list[float]]:
    """Inner optimum over perturbations for a fixed selection mask."""
    values = [float(v) for v in values]
    mask = [int(bool(m)) for m in mask]
    if len(values) != len(mask):
        raise ValueError(f"mask length {len(mask)} != number of values {len(values)}")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    return _witness(values, mask, eps, z)


def half_sums(values: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """All subset sums of ``values`` indexed so that value ``i`` owns bit
    ``len(values) - 1 - i`` (the first value is the most significant bit).

    Sums are accumulated in a fixed order, so both kernel backends see
    identical floats.
    """
    m = len(values)
    sums = np.zeros(1 << m, dtype=np.float64)
    counts = np.zeros(1 << m, dtype=np.int64)
    for i in range(m - 1, -1, -1):
        b = m - 1 - i
        width = 1 << b
        sums[width:2 * width] = sums[:width] + values[i]
        counts[width:2 * width] = counts[:width] + 1
    return sums, counts


def _bits(index: int, width: int) -> list[int]:
    return [(index >> (width - 1 - i)) & 1 for i in range(width)]


def _split(n: int) -> int:
    # number of leading values in the "high" half
    return n // 2


def _solution(values, mask, eps, z) -> PerturbedSolution:
    err, y = _witness(values, mask, eps, z)
    return PerturbedSolution(tuple(mask), tuple(y), err)


def solve_exact(cands: CandidateSet, z: float) -> PerturbedSolution:
    """Global optimum by enumerating every mask.

    Ties go to fewer selected candidates, then to the lexicographically
    smallest mask.
    """
    n = len(cands)
    if n > EXACT_MAX_N:
        raise InstanceTooLarge(
            f"instance too large for solve_exact (n={n} > {EXACT_MAX_N}); "
            f"use solve_meet_in_middle (n <= {MITM_MAX_N})"
        )
    values = cands.values
    if n == 0:
        return PerturbedSolution((), (), abs(z))
    h = _split(n)
    hs, hc = half_sums(values[:h])
    ls, lc = half_sums(values[h:])
    _, _, a, b = kernels.best_mask(hs, hc, ls, lc, float(z), float(cands.eps))
    mask = _bits(a, h) + _bits(b, n - h)
    return _solution(values, mask, cands.eps, z)


def solve_meet_in_middle(cands: CandidateSet, z: float) -> PerturbedSolution:
    """Optimal error via sorted half-sums grouped by selection count.

    The perturbation budget ``k*eps`` depends only on how many candidates
    are selected, so for each pair of per-half counts the best pair is the
    one whose sum is closest to ``z``.
    """
    n = len(cands)
    if n > MITM_MAX_N:
        raise InstanceTooLarge(
            f"instance too large for solve_meet_in_middle (n={n} > {MITM_MAX_N})"
        )
    values = cands.values
    if n == 0:
        return PerturbedSolution((), (), abs(z))
    eps = float(cands.eps)
    z = float(z)
    h = _split(n)
    groups = []
    for part in (values[:h], values[h:]):
        sums, counts = half_sums(part)
        by_count = []
        for k in range(len(part) + 1):
            idx = np.flatnonzero(counts == k)
            order = np.argsort(sums[idx], kind="stable")
            by_count.append((np.ascontiguousarray(sums[idx][order]), idx[order]))
        groups.append(by_count)
    best = (math.inf, 1 << 30, 0, 0)
    for ka, (asums, aidx) in enumerate(groups[0]):
        for kb, (bsums, bidx) in enumerate(groups[1]):
            k = ka + kb
            # error can't beat the current best even with an exact hit
            if best[0] == 0.0 and k >= best[1]:
                continue
            d, i, j = kernels.closest_pair(asums, bsums, z)
            err = max(0.0, d - k * eps)
            if err < best[0] or (err == best[0] and k < best[1]):
                best = (err, k, int(aidx[i]), int(bidx[j]))
    mask = _bits(best[2], h) + _bits(best[3], n - h)
    return _solution(values, mask, eps, z)


def solve_auto(cands: CandidateSet, z: float) -> PerturbedSolution:
    if len(cands) <= _AUTO_EXACT_N:
        return solve_exact(cands, z)
    return solve_meet_in_middle(cands, z)


def achievable_set(cands: CandidateSet) -> IntervalUnion:
    """Union over subsets S of ``[sum_S x - |S| eps, sum_S x + |S| eps]``.

    The empty subset contributes the point 0.
    """
    n = len(cands)
    if n > ACHIEVABLE_MAX_N:
        raise InstanceTooLarge(
            f"achievable_set enumerates 2^n intervals; n={n} > {ACHIEVABLE_MAX_N}"
        )
    sums, counts = half_sums(cands.values)
    radius = counts * cands.eps
    return _from_arrays(sums - radius, sums + radius)


def achievable_set_incremental(values: Sequence[float], eps: float, start: IntervalUnion | None = None):
    """Yield the achievable set after each prefix, starting with ``{0}``.

    Uses ``A_{k+1} = A_k ∪ dilate(A_k + x_{k+1}, eps)``, which also works on
    pre-dilated sets: pass ``start=[-eta, eta]`` to track the eta-coverage.
    """
    cur = start if start is not None else IntervalUnion.point(0.0)
    yield cur
    for x in values:
        cur = union(cur, dilate(cur.translate(float(x)), eps))
        yield cur


def coverage_fraction(cands: CandidateSet, eta: float) -> float:
    """Measure of targets in ``[-1/2, 1/2]`` that have an eta-approximation."""
    if eta < 0:
        raise ValueError("eta must be >= 0")
    if len(cands) == 0:
        base = IntervalUnion.point(0.0)
    else:
        base = achievable_set(cands)
    return measure(intersect_window(dilate(base, eta), *WINDOW))


def coverage_trajectory(values: Sequence[float], eps: float, eta: float, k_max: int | None = None) -> list[float]:
    """Exact coverage fractions ``p_0..p_k`` along prefixes of ``values``."""
    vals = list(values)[: k_max if k_max is not None else None]
    start = IntervalUnion([-eta], [eta])
    return [
        measure(intersect_window(d, *WINDOW))
        for d in achievable_set_incremental(vals, eps, start=start)
    ]


def has_approximation(cands: CandidateSet, eta: float, z: float) -> bool:
    n = len(cands)
    if n > MITM_MAX_N:
        raise InstanceTooLarge(f"n={n} > {MITM_MAX_N}")
    sol = solve_exact(cands, z) if n <= _AUTO_EXACT_N else solve_meet_in_middle(cands, z)
    return sol.error <= eta + 1e-12


def min_prefix(values: Sequence[float], eps: float, eta: float, z: float) -> int | None:
    """Smallest prefix length ``n >= 1`` whose candidates eta-approximate ``z``.

    Tracks the eta-dilated achievable set prefix by prefix, so the cost is
    linear in the number of prefixes instead of exponential in their length.
    Returns ``None`` if no prefix of ``values`` works.
    """
    start = IntervalUnion([-eta], [eta])
    for n, d in enumerate(achievable_set_incremental(values, eps, start=start)):
        if n >= 1 and d.contains(z, tol=1e-12):
            return n
    return None


def _cell_seed(seed: int, trial: int, target_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(trial), int(target_index)])


def draw_candidates(seed: int, trial: int, target_index: int, n: int, low: float = -1.0, high: float = 1.0) -> np.ndarray:
    rng = np.random.default_rng(_cell_seed(seed, trial, target_index))
    return rng.uniform(low, high, size=n)


def _cell_min_prefix(args):
    seed, trial, j, z, eps, eta, n_max, low, high = args
    values = draw_candidates(seed, trial, j, n_max, low, high)
    n = min_prefix(values, eps, eta, z)
    return n_max + 1 if n is None else n


def min_n_search(
    eta: float,
    eps: float,
    targets: Sequence[float],
    trials: int = 10,
    successes_required: int = 8,
    seed: int = 0,
    n_max: int = 400,
    candidate_range: tuple[float, float] = (-1.0, 1.0),
    executor=None,
) -> MinNResult:
    """Minimum candidate count such that ``successes_required`` of ``trials``
    independent draws approximate every target within ``eta``.

    Each (trial, target) cell draws its own ``n_max`` candidates from an RNG
    keyed only on ``(seed, trial, target index)``; prefixes of that draw are
    tested. Because the draw does not depend on ``eps``, the result is
    non-increasing in ``eps`` for fixed everything else.
    """
    if not (eta >= 0 and math.isfinite(eta)):
        raise ValueError("eta must be finite and >= 0")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if not (1 <= successes_required <= trials):
        raise ValueError("need 1 <= successes_required <= trials")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    targets = [float(t) for t in targets]
    if not targets:
        raise ValueError("targets must be nonempty")
    lo, hi = candidate_range
    jobs = [
        (seed, t, j, z, eps, eta, n_max, lo, hi)
        for t in range(trials)
        for j, z in enumerate(targets)
    ]
    mapper = executor.map if executor is not None else map
    cells = list(mapper(_cell_min_prefix, jobs))
    per_trial = [
        max(cells[t * len(targets):(t + 1) * len(targets)]) for t in range(trials)
    ]
    kth = sorted(per_trial)[successes_required - 1]
    found = kth <= n_max
    return MinNResult(
        eta=eta,
        eps=eps,
        min_n=max(1, kth) if found else n_max + 1,
        trials=trials,
        successes_required=successes_required,
        seed=seed,
        found=found,
        per_trial=tuple(per_trial),
    )


def theoretical_n(eta: float, eps: float, c1: float = 1.0, c2: float = 1.0, final_phase: bool = False):
    """Candidate counts from the growth analysis.

    Returns ``(K1, K2)``; with ``final_phase=True`` returns
    ``(K1, K2, n)`` where ``n = 2*K1 + K2 + 1`` includes the extra block
    that grows coverage from ``1 - eps`` to ``1 - eta`` when ``eps > eta``.
    """
    if not (0 < eta < 1):
        raise ValueError("need 0 < eta < 1")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if c1 <= 0 or c2 <= 0:
        raise ValueError("constants must be positive")
    log_inv = math.log(1.0 / eta)
    k1 = math.ceil(c1 * log_inv / math.log(1.25 + eps / 2))
    k2 = math.ceil(c2 * (1.0 + log_inv / (1.0 + eps)))
    if final_phase:
        return k1, k2, 2 * k1 + k2 + 1
    return k1, k2

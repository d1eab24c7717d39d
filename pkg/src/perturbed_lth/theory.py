"""Monte Carlo checks of the coverage-growth analysis.

The surrogate coverage set ``F_k`` evolves as

    F_{k+1} = F_k ∪ ((F_k ∪ S_k) + x_{k+1}) ∩ [-1/2, 1/2]

where ``S_k`` is an eps-extension of ``F_k``. Its measure ``p~_k`` lower
bounds the true eta-coverage ``p_k`` and grows in expectation by
``(1/2)(1 - p~)·min(1, p~ + eps)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .intervals import (
    WINDOW,
    IntervalUnion,
    complement_in_window,
    epsilon_extension,
    intersect_window,
    measure,
    union,
)
from .subsetsum import coverage_trajectory

MAX_INTERVALS = 1_000_000
EXACT_K_MAX = 24
PSI_CLAMP = 1e-15


@dataclass(frozen=True)
class SurrogateState:
    k: int
    fhat: IntervalUnion
    extension: IntervalUnion
    p_tilde: float
    eta: float
    eps: float


@dataclass
class TrajectoryRecord:
    seed: int
    eta: float
    eps: float
    xs: list[float] = field(default_factory=list)
    p_tilde: list[float] = field(default_factory=list)
    # exact coverage for k <= EXACT_K_MAX, None beyond
    p_exact: list[float | None] = field(default_factory=list)
    # z_increment[k] is Z_k; index 0 is None
    z_increment: list[float | None] = field(default_factory=list)
    psi: list[float] = field(default_factory=list)
    saturated: list[bool] = field(default_factory=list)
    k1: int | None = None
    max_intervals: int = 0


def _state(k: int, fhat: IntervalUnion, eta: float, eps: float) -> SurrogateState:
    ext = epsilon_extension(fhat, eps) if eps > 0 else IntervalUnion()
    return SurrogateState(k, fhat, ext, measure(fhat), eta, eps)


def surrogate_init(eta: float, eps: float) -> SurrogateState:
    if not (0 < eta < 0.5):
        raise ValueError("need 0 < eta < 1/2")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    return _state(0, IntervalUnion([-eta], [eta]), eta, eps)


def surrogate_from_set(fhat: IntervalUnion, eps: float, eta: float = float("nan"), k: int = 0) -> SurrogateState:
    """State with an arbitrary support set (clipped to the window)."""
    return _state(k, intersect_window(fhat, *WINDOW), eta, eps)


def surrogate_step(state: SurrogateState, x: float) -> SurrogateState:
    if not (-1.0 <= x <= 1.0):
        raise ValueError(f"shift must lie in [-1, 1], got {x}")
    moved = union(state.fhat, state.extension).translate(x)
    fhat = union(state.fhat, intersect_window(moved, *WINDOW))
    if len(fhat) > MAX_INTERVALS:
        raise RuntimeError(f"interval blow-up: {len(fhat)} intervals at step {state.k + 1}")
    return _state(state.k + 1, fhat, state.eta, state.eps)


def predicted_next(p_tilde: float, eps: float) -> float:
    return p_tilde + 0.5 * (1.0 - p_tilde) * min(1.0, p_tilde + eps)


def next_p_tilde(state: SurrogateState, xs) -> np.ndarray:
    """``p~_{k+1}`` for every shift in ``xs`` without materializing sets."""
    grow = union(state.fhat, state.extension)
    gaps = complement_in_window(state.fhat)
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    gained = kernels.overlap_per_shift(
        np.ascontiguousarray(grow.lo), np.ascontiguousarray(grow.hi),
        np.ascontiguousarray(gaps.lo), np.ascontiguousarray(gaps.hi), xs,
    )
    return state.p_tilde + gained


@dataclass(frozen=True)
class GrowthCheck:
    empirical_mean: float
    predicted: float
    std_err: float

    @property
    def z_score(self) -> float:
        if self.std_err == 0:
            return 0.0 if self.empirical_mean == self.predicted else math.inf
        return abs(self.empirical_mean - self.predicted) / self.std_err

    @property
    def within_3se(self) -> bool:
        return self.z_score <= 3.0


def expected_growth_check(state: SurrogateState, draws: int = 100_000, seed: int = 0) -> GrowthCheck:
    """Compare the Monte Carlo mean of ``p~_{k+1}`` with the closed form."""
    if draws < 1000:
        raise ValueError("draws must be >= 1000")
    xs = np.random.default_rng(seed).uniform(-1.0, 1.0, size=draws)
    nxt = next_p_tilde(state, xs)
    return GrowthCheck(
        float(nxt.mean()),
        predicted_next(state.p_tilde, state.eps),
        float(nxt.std(ddof=1) / math.sqrt(draws)),
    )


def true_growth_check(values, eta: float, eps: float, draws: int = 20_000, seed: int = 0) -> GrowthCheck:
    """Same comparison for the exact coverage of a fixed candidate prefix.

    Here the closed form is only a lower bound on the mean; ``GrowthCheck``
    reports both numbers and the caller checks ``mean >= predicted - 3 se``.
    """
    from .subsetsum import achievable_set_incremental

    *_, d = achievable_set_incremental(list(values), eps, start=IntervalUnion([-eta], [eta]))
    p = measure(intersect_window(d, *WINDOW))
    moved = d.dilate(eps)
    covered = intersect_window(d, *WINDOW)
    gaps = complement_in_window(covered)
    xs = np.random.default_rng(seed).uniform(-1.0, 1.0, size=draws)
    gained = kernels.overlap_per_shift(
        np.ascontiguousarray(moved.lo), np.ascontiguousarray(moved.hi),
        np.ascontiguousarray(gaps.lo), np.ascontiguousarray(gaps.hi), xs,
    )
    nxt = p + gained
    return GrowthCheck(float(nxt.mean()), predicted_next(p, eps), float(nxt.std(ddof=1) / math.sqrt(draws)))


def psi(p: float, eps: float) -> float:
    """Potential used to track growth past 1/4; ``log(1 - p)`` is clamped."""
    return (math.log(p + eps) - math.log(max(1.0 - p, PSI_CLAMP))) / (1.0 + eps) + 16.0 / 3.0 * p


def z_increment(p_prev: float, p_next: float, eps: float) -> float | None:
    denom = (1.0 - p_prev) * (p_prev + eps)
    if denom <= 0.0:
        return None
    return (p_next - p_prev) / denom


def simulate_trajectory(eta: float, eps: float, n: int, seed: int, exact_k_max: int = EXACT_K_MAX) -> TrajectoryRecord:
    if n > 200:
        raise ValueError("n must be <= 200")
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-1.0, 1.0, size=n)
    rec = TrajectoryRecord(seed=seed, eta=eta, eps=eps, xs=[float(x) for x in xs])
    state = surrogate_init(eta, eps)
    exact = coverage_trajectory(xs, eps, eta, k_max=min(n, exact_k_max))

    rec.p_tilde.append(state.p_tilde)
    rec.z_increment.append(None)
    rec.psi.append(psi(state.p_tilde, eps))
    rec.saturated.append(state.p_tilde >= 1.0 - PSI_CLAMP)
    for k, x in enumerate(xs, start=1):
        prev = state.p_tilde
        state = surrogate_step(state, float(x))
        rec.max_intervals = max(rec.max_intervals, len(state.fhat))
        rec.p_tilde.append(state.p_tilde)
        rec.z_increment.append(z_increment(prev, state.p_tilde, eps))
        rec.psi.append(psi(state.p_tilde, eps))
        rec.saturated.append(state.p_tilde >= 1.0 - PSI_CLAMP)
    rec.p_exact = [exact[k] if k < len(exact) else None for k in range(n + 1)]
    rec.k1 = next((k for k, p in enumerate(rec.p_tilde) if p > 0.25), None)
    return rec


@dataclass
class Violations:
    monotone: int = 0
    step_cap: int = 0
    z_bound: int = 0
    psi_gain: int = 0
    domination: int = 0

    @property
    def total(self) -> int:
        return self.monotone + self.step_cap + self.z_bound + self.psi_gain + self.domination

    def __add__(self, other: "Violations") -> "Violations":
        return Violations(*(a + b for a, b in zip(self.as_tuple(), other.as_tuple())))

    def as_tuple(self):
        return (self.monotone, self.step_cap, self.z_bound, self.psi_gain, self.domination)


def check_trajectory(rec: TrajectoryRecord, domination_k_max: int = 20, tol: float = 1e-12) -> Violations:
    """Count violations of the per-step invariants along one trajectory."""
    v = Violations()
    eps = rec.eps
    p = rec.p_tilde
    for k in range(len(p) - 1):
        a, b = p[k], p[k + 1]
        if b < a - tol:
            v.monotone += 1
        if b > min(1.0, 2 * a + eps) + tol:
            v.step_cap += 1
        z = rec.z_increment[k + 1]
        if z is not None and not (-tol <= z <= 2.0 / (1.0 + eps) + 1e-9):
            v.z_bound += 1
        if z is not None and 0.25 <= a < 1 - 1e-6 and not rec.saturated[k + 1]:
            if rec.psi[k + 1] < rec.psi[k] + z - 1e-9:
                v.psi_gain += 1
    for k, (pt, pe) in enumerate(zip(p, rec.p_exact)):
        if k <= domination_k_max and pe is not None and pt > pe + tol:
            v.domination += 1
    return v


def hoeffding_final_bound(eps: float, eta: float, k3: int) -> float:
    """Lower bound on the final-phase success probability."""
    t = (k3 - 1) * eps + eta
    return 1.0 - math.exp(-t * t / (2.0 * k3))


def final_phase_check(eps: float, eta: float, k3: int, draws: int = 10_000, seed: int = 0) -> float:
    """Fraction of fresh size-``k3`` candidate sets whose perturbed sums
    cover every offset in ``[eta - eps, eps - eta]``."""
    if eps < eta:
        raise ValueError("final phase needs eps >= eta")
    if k3 < 1:
        raise ValueError("k3 must be >= 1")
    rng = np.random.default_rng(seed)
    sums = rng.uniform(-1.0, 1.0, size=(draws, k3)).sum(axis=1)
    lo, hi = eta - eps, eps - eta
    ok = (sums - k3 * eps <= lo) & (sums + k3 * eps >= hi)
    return float(ok.mean())

"""Finite unions of closed intervals on the real line.

Every feasible or achievable set in the subset-sum analysis is one of
these. An :class:`IntervalUnion` is immutable and always normalized:
members are sorted, disjoint, and separated by more than ``MERGE_TOL``.
"""

from __future__ import annotations

import json
import math
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import kernels

MERGE_TOL = 1e-12
WINDOW = (-0.5, 0.5)


class Interval(NamedTuple):
    lo: float
    hi: float


class IntervalUnion:
    """Normalized union of closed intervals, stored as two float arrays."""

    __slots__ = ("_lo", "_hi")

    def __init__(self, lo=(), hi=(), *, _trusted=False):
        lo = np.array(lo, dtype=np.float64).ravel()
        hi = np.array(hi, dtype=np.float64).ravel()
        if not _trusted:
            if lo.shape != hi.shape:
                raise ValueError("lo and hi must have the same length")
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise ValueError("interval endpoints must be finite")
            bad = np.flatnonzero(lo > hi)
            if bad.size:
                i = int(bad[0])
                raise ValueError(f"interval {i} has lo > hi: [{lo[i]}, {hi[i]}]")
            order = np.argsort(lo, kind="stable")
            lo, hi = kernels.merge_sorted(lo[order], hi[order], MERGE_TOL)
        lo.flags.writeable = False
        hi.flags.writeable = False
        self._lo = lo
        self._hi = hi

    @classmethod
    def empty(cls) -> "IntervalUnion":
        return cls()

    @classmethod
    def point(cls, x: float) -> "IntervalUnion":
        return cls([x], [x])

    @property
    def lo(self) -> np.ndarray:
        return self._lo

    @property
    def hi(self) -> np.ndarray:
        return self._hi

    @property
    def intervals(self) -> list[Interval]:
        return [Interval(float(a), float(b)) for a, b in zip(self._lo, self._hi)]

    def __len__(self) -> int:
        return self._lo.size

    def __bool__(self) -> bool:
        return self._lo.size > 0

    def __iter__(self):
        return iter(self.intervals)

    def __eq__(self, other) -> bool:
        if not isinstance(other, IntervalUnion):
            return NotImplemented
        return np.array_equal(self._lo, other._lo) and np.array_equal(self._hi, other._hi)

    def __hash__(self):
        return hash((self._lo.tobytes(), self._hi.tobytes()))

    def __repr__(self) -> str:
        body = ", ".join(f"[{a:.6g}, {b:.6g}]" for a, b in zip(self._lo[:6], self._hi[:6]))
        more = f", ... ({len(self)} total)" if len(self) > 6 else ""
        return f"IntervalUnion([{body}{more}])"

    def isclose(self, other: "IntervalUnion", atol: float = 1e-12) -> bool:
        return (
            len(self) == len(other)
            and np.allclose(self._lo, other._lo, rtol=0, atol=atol)
            and np.allclose(self._hi, other._hi, rtol=0, atol=atol)
        )

    # set algebra ---------------------------------------------------------

    def union(self, other: "IntervalUnion") -> "IntervalUnion":
        return union(self, other)

    def translate(self, shift: float) -> "IntervalUnion":
        return translate(self, shift)

    def dilate(self, radius: float) -> "IntervalUnion":
        return dilate(self, radius)

    def intersect_window(self, lo: float, hi: float) -> "IntervalUnion":
        return intersect_window(self, lo, hi)

    def measure(self) -> float:
        return measure(self)

    def contains(self, z: float, tol: float = 0.0) -> bool:
        return distance_to_point(self, z) <= tol

    # serialization -------------------------------------------------------

    def to_list(self) -> list[list[float]]:
        return [[float(a), float(b)] for a, b in zip(self._lo, self._hi)]

    def to_json(self) -> str:
        return json.dumps(self.to_list())

    @classmethod
    def from_list(cls, pairs: Iterable[Sequence[float]]) -> "IntervalUnion":
        return normalize([Interval(float(p[0]), float(p[1])) for p in pairs])

    @classmethod
    def from_json(cls, text: str) -> "IntervalUnion":
        data = json.loads(text)
        if not isinstance(data, list) or any(
            not isinstance(p, (list, tuple)) or len(p) != 2 for p in data
        ):
            raise ValueError("expected a JSON array of [lo, hi] pairs")
        return cls.from_list(data)


def normalize(raw: Iterable[Sequence[float]]) -> IntervalUnion:
    """Sort and merge raw ``(lo, hi)`` pairs; touching intervals merge.

    >>> normalize([(0, 1), (0.5, 2)]).to_list()
    [[0.0, 2.0]]
    """
    pairs = [tuple(p) for p in raw]
    if not pairs:
        return IntervalUnion()
    arr = np.array(pairs, dtype=np.float64).reshape(-1, 2)
    return IntervalUnion(arr[:, 0], arr[:, 1])


def _from_arrays(lo: np.ndarray, hi: np.ndarray) -> IntervalUnion:
    # arrays may be unsorted and overlapping but are known finite with lo <= hi
    if lo.size == 0:
        return IntervalUnion()
    order = np.argsort(lo, kind="stable")
    mlo, mhi = kernels.merge_sorted(
        np.ascontiguousarray(lo[order]), np.ascontiguousarray(hi[order]), MERGE_TOL
    )
    return IntervalUnion(mlo, mhi, _trusted=True)


def union(a: IntervalUnion, b: IntervalUnion) -> IntervalUnion:
    if not b:
        return a
    if not a:
        return b
    return _from_arrays(np.concatenate((a.lo, b.lo)), np.concatenate((a.hi, b.hi)))


def union_all(parts: Iterable[IntervalUnion]) -> IntervalUnion:
    parts = [p for p in parts if p]
    if not parts:
        return IntervalUnion()
    return _from_arrays(
        np.concatenate([p.lo for p in parts]), np.concatenate([p.hi for p in parts])
    )


def translate(a: IntervalUnion, shift: float) -> IntervalUnion:
    if not a:
        return a
    # shifting can close gaps of width ~ulp, so renormalize
    return _from_arrays(a.lo + shift, a.hi + shift)


def dilate(a: IntervalUnion, radius: float) -> IntervalUnion:
    """Minkowski sum with ``[-radius, radius]``."""
    if radius < 0 or not math.isfinite(radius):
        raise ValueError(f"dilation radius must be finite and >= 0, got {radius}")
    if radius == 0 or not a:
        return a
    return _from_arrays(a.lo - radius, a.hi + radius)


def intersect_window(a: IntervalUnion, lo: float, hi: float) -> IntervalUnion:
    if lo > hi:
        raise ValueError(f"window lo > hi: [{lo}, {hi}]")
    if not a:
        return a
    keep = (a.hi >= lo) & (a.lo <= hi)
    return IntervalUnion(
        np.maximum(a.lo[keep], lo), np.minimum(a.hi[keep], hi), _trusted=True
    )


def intersect(a: IntervalUnion, b: IntervalUnion) -> IntervalUnion:
    """Point-set intersection of two normalized unions."""
    out_lo, out_hi = [], []
    i = j = 0
    alo, ahi, blo, bhi = a.lo, a.hi, b.lo, b.hi
    while i < len(alo) and j < len(blo):
        lo = max(alo[i], blo[j])
        hi = min(ahi[i], bhi[j])
        if lo <= hi:
            out_lo.append(lo)
            out_hi.append(hi)
        if ahi[i] < bhi[j]:
            i += 1
        else:
            j += 1
    return _from_arrays(np.array(out_lo), np.array(out_hi))


def complement_in_window(a: IntervalUnion, lo: float = WINDOW[0], hi: float = WINDOW[1]) -> IntervalUnion:
    """Closure of ``[lo, hi] \\ a`` (gaps of zero length are dropped)."""
    inner = intersect_window(a, lo, hi)
    starts = np.concatenate(([lo], inner.hi))
    ends = np.concatenate((inner.lo, [hi]))
    keep = ends > starts
    return IntervalUnion(starts[keep], ends[keep], _trusted=True)


def measure(a: IntervalUnion) -> float:
    return float(np.sum(a.hi - a.lo))


def distance_to_point(a: IntervalUnion, z: float) -> float:
    """Distance from ``z`` to the set; ``inf`` for the empty union
    (meaning no approximation exists)."""
    if not a:
        return math.inf
    i = int(np.searchsorted(a.lo, z, side="right")) - 1
    best = math.inf
    if i >= 0:
        best = max(0.0, z - float(a.hi[i]))
    if i + 1 < len(a):
        best = min(best, float(a.lo[i + 1]) - z)
    return best


def epsilon_extension(
    f: IntervalUnion, eps: float, window: tuple[float, float] = WINDOW
) -> IntervalUnion:
    """Deterministic eps-extension of ``f`` inside ``window``.

    The result is disjoint from ``f`` (up to shared endpoints), lies within
    ``eps`` of ``f``, and has measure ``min(eps, width - measure(f))``.
    Intervals of ``f`` are scanned in ascending order, claiming the gap to
    the left and then to the right of each, until the measure is reached.
    """
    if not f:
        raise ValueError("epsilon_extension needs a nonempty set")
    if eps < 0 or not math.isfinite(eps):
        raise ValueError(f"eps must be finite and >= 0, got {eps}")
    wlo, whi = window
    f = intersect_window(f, wlo, whi)
    if not f:
        raise ValueError("set does not meet the window")
    target = min(eps, (whi - wlo) - measure(f))
    if target <= MERGE_TOL:
        return IntervalUnion()

    flo, fhi = f.lo, f.hi
    m = len(f)
    pieces: list[tuple[float, float]] = []
    need = target
    # right edge of the region already claimed (or covered by f)
    claimed = wlo
    for k in range(m):
        gap_start = wlo if k == 0 else float(fhi[k - 1])
        left_lo = max(float(flo[k]) - eps, gap_start, claimed)
        left_hi = float(flo[k])
        if left_hi > left_lo and need > 0:
            take = min(left_hi - left_lo, need)
            # take the part adjacent to f
            pieces.append((left_hi - take, left_hi))
            need -= take
        claimed = float(fhi[k])
        if need <= 0:
            break
        gap_end = whi if k == m - 1 else float(flo[k + 1])
        right_lo = float(fhi[k])
        right_hi = min(right_lo + eps, gap_end)
        if right_hi > right_lo:
            take = min(right_hi - right_lo, need)
            pieces.append((right_lo, right_lo + take))
            need -= take
            claimed = right_lo + take
        if need <= 0:
            break

    if need > MERGE_TOL:
        pieces.extend(_fallback_scan(f, eps, need, pieces, window))
    out = normalize(pieces)
    got = measure(out)
    if abs(got - target) > 1e-9:
        raise RuntimeError(
            f"could not build an eps-extension: measure {got}, required {target}"
        )
    return out


def _fallback_scan(f, eps, need, pieces, window):
    # whole eps-neighbourhood minus f minus what was already taken
    near = intersect_window(dilate(f, eps), *window)
    taken = union(f, normalize(pieces)) if pieces else f
    free = intersect(near, complement_in_window(taken, *window))
    extra = []
    for a, b in free:
        if need <= 0:
            break
        take = min(b - a, need)
        extra.append((a, a + take))
        need -= take
    return extra

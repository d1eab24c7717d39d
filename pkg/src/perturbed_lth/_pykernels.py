"""Pure NumPy implementations of the hot kernels.

Used when the compiled extension is unavailable or when
``PERTURBED_LTH_PURE=1`` is set. ``merge_sorted`` and ``best_mask`` are
bit-identical to their compiled twins; ``closest_pair`` returns the same
distance (witness indices may differ on ties) and ``overlap_per_shift``
agrees to rounding.
"""

import numpy as np

# rows x cols per broadcast block in best_mask
_BLOCK_CELLS = 1 << 20


def merge_sorted(lo, hi, tol):
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if lo.size == 0:
        return lo.copy(), hi.copy()
    run_hi = np.maximum.accumulate(hi)
    starts = np.empty(lo.size, dtype=bool)
    starts[0] = True
    starts[1:] = lo[1:] > run_hi[:-1] + tol
    first = np.flatnonzero(starts)
    last = np.append(first[1:] - 1, lo.size - 1)
    return lo[first].copy(), run_hi[last].copy()


def best_mask(hi_sums, hi_counts, lo_sums, lo_counts, z, eps):
    hi_sums = np.asarray(hi_sums, dtype=np.float64)
    lo_sums = np.asarray(lo_sums, dtype=np.float64)
    hi_counts = np.asarray(hi_counts, dtype=np.int64)
    lo_counts = np.asarray(lo_counts, dtype=np.int64)
    nl = lo_sums.size
    rows = max(1, _BLOCK_CELLS // max(nl, 1))
    best = (np.inf, 1 << 30, 0, 0)
    for a0 in range(0, hi_sums.size, rows):
        hs = hi_sums[a0:a0 + rows]
        cnt = hi_counts[a0:a0 + rows, None] + lo_counts[None, :]
        err = np.abs(z - (hs[:, None] + lo_sums[None, :])) - cnt.astype(np.float64) * eps
        np.maximum(err, 0.0, out=err)
        e = err.min()
        if e > best[0]:
            continue
        hit = err == e
        c = cnt[hit].min()
        if e == best[0] and c >= best[1]:
            continue
        flat = np.flatnonzero(hit & (cnt == c))[0]
        best = (float(e), int(c), a0 + int(flat // nl), int(flat % nl))
    return best


def closest_pair(a_sorted, b_sorted, z):
    a = np.asarray(a_sorted, dtype=np.float64)
    b = np.asarray(b_sorted, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        return 1e308, -1, -1
    j0 = np.searchsorted(b, z - a)
    offsets = np.arange(-2, 2)
    cand = np.clip(j0[:, None] + offsets[None, :], 0, b.size - 1)
    d = np.abs(z - (a[:, None] + b[cand]))
    flat = int(np.argmin(d))
    i, k = divmod(flat, offsets.size)
    return float(d[i, k]), i, int(cand[i, k])


def overlap_per_shift(g_lo, g_hi, c_lo, c_hi, shifts):
    g_lo = np.asarray(g_lo, dtype=np.float64)
    g_hi = np.asarray(g_hi, dtype=np.float64)
    c_lo = np.asarray(c_lo, dtype=np.float64)
    c_hi = np.asarray(c_hi, dtype=np.float64)
    shifts = np.asarray(shifts, dtype=np.float64)
    if g_lo.size == 0 or c_lo.size == 0:
        return np.zeros(shifts.size)
    lengths = c_hi - c_lo
    before = np.concatenate(([0.0], np.cumsum(lengths)))

    def covered_upto(t):
        # measure of C ∩ (-inf, t]
        idx = np.searchsorted(c_lo, t, side="right") - 1
        safe = np.clip(idx, 0, None)
        partial = np.clip(t - c_lo[safe], 0.0, lengths[safe])
        return np.where(idx < 0, 0.0, before[safe] + partial)

    out = np.empty(shifts.size)
    step = max(1, (1 << 20) // g_lo.size)
    for s0 in range(0, shifts.size, step):
        x = shifts[s0:s0 + step, None]
        out[s0:s0 + step] = (covered_upto(g_hi[None, :] + x)
                             - covered_upto(g_lo[None, :] + x)).sum(axis=1)
    return out

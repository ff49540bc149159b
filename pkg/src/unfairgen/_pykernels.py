"""Pure numpy implementations of the combinatorial kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and the same results; ``unfairgen.kernels`` picks one at import time.

Bit convention: attribute ``a[0]`` is the most significant bit of the integer
code, so ascending codes enumerate vectors in ascending binary order.
"""
import numpy as np


def pack_bits(bits):
    bits = np.ascontiguousarray(bits, dtype=np.uint8)
    n, d = bits.shape
    if d > 62:
        raise ValueError("dimension above 62 cannot be packed into int64 codes")
    weights = np.left_shift(np.int64(1), np.arange(d - 1, -1, -1, dtype=np.int64))
    return bits.astype(np.int64) @ weights if n else np.zeros(0, dtype=np.int64)


def unpack_codes(codes, d):
    codes = np.ascontiguousarray(codes, dtype=np.int64)
    shifts = np.arange(d - 1, -1, -1, dtype=np.int64)
    return ((codes[:, None] >> shifts[None, :]) & 1).astype(np.uint8)


def best_split(bits, y, w, allowed, min_leaf):
    """Best weighted-variance-reduction split over binary columns.

    Returns ``(feature, gain)``; ``feature`` is -1 when no column yields a
    split with at least ``min_leaf`` rows on each side. Ties within a
    relative 1e-12 go to the lowest column index.
    """
    bits = np.ascontiguousarray(bits, dtype=np.uint8)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, d = bits.shape
    total_w = w.sum()
    yc = y - (w @ y) / total_w
    x = bits.astype(np.float64)
    parent_sse = w @ (yc * yc)

    n_right = bits.sum(axis=0, dtype=np.int64)
    n_left = n - n_right
    w_right = w @ x
    wy_right = (w * yc) @ x
    wyy_right = (w * yc * yc) @ x
    w_left = total_w - w_right
    wy_left = (w @ yc) - wy_right
    wyy_left = parent_sse - wyy_right

    best_f, best_gain = -1, 0.0
    for f in range(d):
        if not allowed[f] or n_left[f] < min_leaf or n_right[f] < min_leaf:
            continue
        if w_left[f] <= 0.0 or w_right[f] <= 0.0:
            continue
        sse_l = wyy_left[f] - wy_left[f] * wy_left[f] / w_left[f]
        sse_r = wyy_right[f] - wy_right[f] * wy_right[f] / w_right[f]
        gain = parent_sse - sse_l - sse_r
        if best_f < 0 or gain > best_gain + 1e-12 * max(1.0, abs(best_gain)):
            best_f, best_gain = f, gain
    return best_f, float(best_gain)


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def eval_landscape_codes(codes, d, offset, linear, pair_i, pair_j, pair_w,
                         cohort_mask, cohort_value, cohort_boost):
    codes = np.ascontiguousarray(codes, dtype=np.int64)
    bits = unpack_codes(codes, d).astype(np.float64)
    score = np.full(codes.shape[0], float(offset))
    for i in range(d):
        score += linear[i] * bits[:, i]
    for i, j, wij in zip(pair_i, pair_j, pair_w):
        score += wij * bits[:, i] * bits[:, j]
    for mask, value, boost in zip(cohort_mask, cohort_value, cohort_boost):
        score += boost * ((codes & mask) == value)
    return softplus(score)


def expand_completions(fixed_mask, fixed_value, d):
    """All codes that agree with ``fixed_value`` on ``fixed_mask``, ascending."""
    fixed_mask = int(fixed_mask)
    fixed_value = int(fixed_value) & fixed_mask
    free = [p for p in range(d - 1, -1, -1) if not (fixed_mask >> p) & 1]
    free_pos = np.array(free[::-1], dtype=np.int64)  # low bit positions first
    u = free_pos.size
    out = np.full(1 << u, fixed_value, dtype=np.int64)
    if u:
        idx = np.arange(1 << u, dtype=np.int64)
        for k, pos in enumerate(free_pos):
            out |= ((idx >> k) & 1) << pos
    return out

"""Pure-Python (numpy) implementations of the hot kernels.

Mirrors rhythmsim.kernels._native operation for operation: same comparison
sides, same arithmetic order, no fused multiply-adds, so a seeded run produces
bit-identical results on either backend.
"""

import numpy as np

BACKEND = "fallback"


def unit_disk_pairs(x, y, radius):
    """Indices (i, j), i < j, of points within `radius` of each other.

    x, y: float64 arrays of equal length. Returns two int32 arrays.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        empty = np.zeros(0, dtype=np.int32)
        return empty, empty
    dx = x[:, None] - x[None, :]
    dy = y[:, None] - y[None, :]
    close = (dx * dx + dy * dy) <= radius * radius
    iu = np.triu_indices(n, k=1)
    mask = close[iu]
    return iu[0][mask].astype(np.int32), iu[1][mask].astype(np.int32)


def linear_interp(xq, xp, fp):
    """Piecewise-linear interpolation with flat extrapolation at both ends.

    xp must be strictly increasing with at least 2 samples.
    """
    xq = np.ascontiguousarray(xq, dtype=np.float64)
    xp = np.ascontiguousarray(xp, dtype=np.float64)
    fp = np.ascontiguousarray(fp, dtype=np.float64)
    idx = np.searchsorted(xp, xq, side="right") - 1
    idx = np.clip(idx, 0, xp.shape[0] - 2)
    x0 = xp[idx]
    x1 = xp[idx + 1]
    f0 = fp[idx]
    f1 = fp[idx + 1]
    frac = (xq - x0) / (x1 - x0)
    frac = np.clip(frac, 0.0, 1.0)
    return f0 + (f1 - f0) * frac


def weighted_pick(cum_weights, uniforms):
    """Categorical draws by inverse CDF over a cumulative weight array.

    cum_weights: nondecreasing float64 array, total = cum_weights[-1] > 0.
    uniforms: draws in [0, 1). Returns int64 indices.
    """
    cum_weights = np.ascontiguousarray(cum_weights, dtype=np.float64)
    uniforms = np.ascontiguousarray(uniforms, dtype=np.float64)
    keys = uniforms * cum_weights[-1]
    return np.searchsorted(cum_weights, keys, side="right").astype(np.int64)

"""Pure numpy implementations of the hot kernels.

Semantics here define the contract; the compiled module must agree with these
to floating-point round-off.
"""

import numpy as np


def bilinear_sample(field, pts):
    """Sample an (H, W[, C]) grid at real (x, y) positions, clamped to the grid."""
    field = np.asarray(field)
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    h, w = field.shape[:2]
    x = np.clip(pts[:, 0], 0.0, w - 1.0)
    y = np.clip(pts[:, 1], 0.0, h - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    f = field.astype(np.float64, copy=False)
    if f.ndim == 3:
        fx = fx[:, None]
        fy = fy[:, None]
    top = f[y0, x0] * (1 - fx) + f[y0, x1] * fx
    bot = f[y1, x0] * (1 - fx) + f[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def pairwise_hi(a, b):
    """Histogram intersection between every row of ``a`` and every row of ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.empty((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        out[i] = np.minimum(a[i][None, :], b).sum(axis=1)
    return out


def diag_window_sums(d, T):
    """S[i, j] = sum_{t<T} d[i+t, j+t] for all valid start pairs."""
    d = np.asarray(d, dtype=np.float64)
    n, m = d.shape
    if n < T or m < T:
        return np.zeros((max(n - T + 1, 0), max(m - T + 1, 0)))
    out = np.zeros((n - T + 1, m - T + 1))
    for t in range(T):
        out += d[t:t + n - T + 1, t:t + m - T + 1]
    return out


def complete_linkage(d):
    """Agglomerative complete-linkage clustering on a square distance matrix.

    Returns an (n-1, 4) array of merges ``(id_a, id_b, height, size)`` using
    scipy's id convention (new cluster ids n, n+1, ...). At each step the pair
    of active slots with the smallest distance is merged, ties going to the
    lexicographically smallest (slot_a, slot_b); the merged cluster keeps the
    smaller slot.
    """
    dist = np.array(d, dtype=np.float64, copy=True)
    n = dist.shape[0]
    merges = np.zeros((max(n - 1, 0), 4))
    if n < 2:
        return merges
    active = np.ones(n, dtype=bool)
    ids = np.arange(n, dtype=np.float64)
    sizes = np.ones(n)
    iu = np.triu(np.ones((n, n), dtype=bool), 1)
    big = np.inf
    work = np.where(iu, dist, big)
    for s in range(n - 1):
        flat = int(np.argmin(work))  # row-major argmin = lexicographic tie-break
        a, b = divmod(flat, n)
        h = work[a, b]
        merges[s] = (min(ids[a], ids[b]), max(ids[a], ids[b]), h, sizes[a] + sizes[b])
        # complete linkage update into slot a
        newrow = np.maximum(dist[a], dist[b])
        dist[a, :] = newrow
        dist[:, a] = newrow
        active[b] = False
        sizes[a] += sizes[b]
        ids[a] = n + s
        work[b, :] = big
        work[:, b] = big
        rowmask = active & (np.arange(n) > a)
        work[a, :] = np.where(rowmask, newrow, big)
        colmask = active & (np.arange(n) < a)
        work[:, a] = np.where(colmask, newrow, big)
    return merges

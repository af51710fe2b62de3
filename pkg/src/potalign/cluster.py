"""PoT codebook, bag-of-words encoding and complete-linkage behavior clustering."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .datamodel import Interval

log = logging.getLogger(__name__)


class CodebookError(ValueError):
    pass


@dataclass(frozen=True)
class Codebook:
    centers: np.ndarray  # (V, dim)
    energy: float
    run_energies: tuple = ()
    seed: int = 0

    @property
    def V(self) -> int:
        return self.centers.shape[0]

    def to_json(self):
        return {"centers": self.centers.tolist(), "energy": self.energy,
                "run_energies": list(self.run_energies), "seed": self.seed}

    @classmethod
    def from_json(cls, obj):
        return cls(np.asarray(obj["centers"], dtype=np.float64), float(obj["energy"]),
                   tuple(obj.get("run_energies", ())), int(obj.get("seed", 0)))


@dataclass(frozen=True)
class BoW:
    """L1-normalized histogram; ``count`` is the number of descriptors behind it."""

    weights: np.ndarray
    count: int

    @property
    def empty(self) -> bool:
        return self.count == 0


@dataclass
class ClusterResult:
    assignment: np.ndarray  # item -> cluster id in 0..k-1
    merges: np.ndarray  # (n-1, 4): id_a, id_b, height, size
    k: int
    items: list = field(default_factory=list)
    excluded: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "assignment": [int(a) for a in self.assignment],
            "merges": [[int(m[0]), int(m[1]), float(m[2]), int(m[3])] for m in self.merges],
            "k": int(self.k),
            "items": self.items,
            "excluded": self.excluded,
            "params": self.params,
        }

    @classmethod
    def from_json(cls, obj):
        merges = np.asarray(obj["merges"], dtype=np.float64).reshape(-1, 4)
        return cls(np.asarray(obj["assignment"], dtype=np.int64), merges, int(obj["k"]),
                   obj.get("items", []), obj.get("excluded", []), obj.get("params", {}))


# ---------------------------------------------------------------------------
# k-means


def _sq_dists(X, C, x2=None):
    """Squared Euclidean distances via the expansion, clipped at zero."""
    x2 = (X * X).sum(1) if x2 is None else x2
    d = x2[:, None] - 2.0 * (X @ C.T) + (C * C).sum(1)[None, :]
    np.maximum(d, 0.0, out=d)
    return d


def _lloyd(X, init, max_iter, tol, x2):
    C = init.copy()
    V = len(C)
    history = []
    prev = None
    rows = np.arange(len(X))
    for _ in range(max_iter):
        # |x|^2 is constant per row, so it only enters the minimum
        g = X @ C.T
        g *= -2.0
        g += (C * C).sum(1)[None, :]
        lab = g.argmin(1)
        dmin = np.maximum(g[rows, lab] + x2, 0.0)
        counts = np.bincount(lab, minlength=V)
        empty = np.nonzero(counts == 0)[0]
        if len(empty):
            # move empty centers onto the worst-fit points
            far = np.argsort(-dmin, kind="stable")[: len(empty)]
            for c, i in zip(empty, far):
                C[c] = X[i]
                lab[i] = c
                dmin[i] = 0.0
            counts = np.bincount(lab, minlength=V)
        energy = float(dmin.sum())
        history.append(energy)
        sums = np.stack([np.bincount(lab, weights=X[:, j], minlength=V) for j in range(X.shape[1])], axis=1)
        C = sums / counts[:, None]
        if prev is not None and prev - energy <= tol * max(prev, 1e-300):
            break
        prev = energy
    lab = _sq_dists(X, C, x2).argmin(1)
    energy = float(((X - C[lab]) ** 2).sum())
    history.append(energy)
    return C, energy, history


def build_codebook(descriptors, V: int = 800, runs: int = 8, seed: int = 0,
                   max_iter: int = 100, tol: float = 1e-6, sample_cap: int | None = 200_000,
                   return_history: bool = False):
    """Lloyd k-means restarted ``runs`` times; the lowest-energy run wins.

    Each run seeds its centers with V distinct sample points drawn from its
    own sub-seed. ``sample_cap`` bounds the number of descriptors used.
    """
    X = np.asarray(descriptors, dtype=np.float64)
    if X.ndim != 2 or len(X) < V:
        raise CodebookError(f"codebook sample has {len(X)} descriptors, fewer than V={V}; use a smaller V")
    if V < 2:
        raise CodebookError("V must be at least 2")
    if sample_cap is not None and len(X) > sample_cap:
        idx = np.sort(np.random.default_rng([seed, 0xC0DE]).choice(len(X), sample_cap, replace=False))
        X = X[idx]
    x2 = (X * X).sum(1)
    best = None
    energies, histories = [], []
    for r in range(runs):
        rng = np.random.default_rng([seed, r])
        init = X[rng.choice(len(X), V, replace=False)]
        C, e, hist = _lloyd(X, init, max_iter, tol, x2)
        energies.append(e)
        histories.append(hist)
        if best is None or e < best[1]:
            best = (C, e)
    cb = Codebook(best[0], best[1], tuple(energies), seed)
    return (cb, histories) if return_history else cb


def quantize(descriptors, codebook: Codebook) -> np.ndarray:
    """Nearest center index per descriptor (ties to the lowest index)."""
    X = np.atleast_2d(np.asarray(descriptors, dtype=np.float64))
    C = codebook.centers
    out = np.empty(len(X), dtype=np.int64)
    for s in range(0, len(X), 4096):
        xb = X[s:s + 4096]
        d = _sq_dists(xb, C)
        lab = d.argmin(1)
        m = d[np.arange(len(xb)), lab]
        # rows whose runner-up is within round-off get an exact recheck
        near = (d <= (m + 1e-9 * (1.0 + m))[:, None]).sum(1) > 1
        for i in np.nonzero(near)[0]:
            lab[i] = int(((C - xb[i]) ** 2).sum(1).argmin())
        out[s:s + len(xb)] = lab
    return out


# ---------------------------------------------------------------------------
# bags of words


def normalize(counts) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    tot = counts.sum(axis=-1, keepdims=True)
    return np.divide(counts, tot, out=np.zeros_like(counts), where=tot > 0)


def interval_bow(interval: Interval, potset, words, V: int) -> BoW:
    """BoW of the PoTs whose span intersects the interval."""
    sel = potset.span_mask(interval.start_frame, interval.end_frame)
    counts = np.bincount(np.asarray(words)[sel], minlength=V).astype(np.float64)
    return BoW(normalize(counts), int(sel.sum()))


def frame_counts(potset, words, n_frames: int, V: int) -> np.ndarray:
    """(n_frames, V) raw counts; each PoT counts in every frame of its span."""
    out = np.zeros((n_frames, V))
    words = np.asarray(words)
    for t in range(potset.n):
        fr = potset.start_frames + t
        ok = (fr >= 0) & (fr < n_frames)
        np.add.at(out, (fr[ok], words[ok]), 1.0)
    return out


# ---------------------------------------------------------------------------
# distances


def histogram_intersection(b_u, b_v) -> float:
    return float(np.minimum(np.asarray(b_u, dtype=np.float64), np.asarray(b_v, dtype=np.float64)).sum())


def hi_distance(b_u, b_v) -> float:
    """-exp(-(1 - HI)); -1 for identical histograms, -1/e for disjoint ones."""
    return -math.exp(-(1.0 - histogram_intersection(b_u, b_v)))


def channel_averages(channels) -> np.ndarray:
    """A_i: mean of (1 - HI) over all unordered item pairs, per channel."""
    A = []
    for ch in channels:
        ch = np.asarray(ch, dtype=np.float64)
        m = len(ch)
        if m < 2:
            A.append(1.0)
            continue
        hi = kernels.pairwise_hi(ch, ch)
        iu = np.triu_indices(m, 1)
        A.append(float(np.mean(1.0 - hi[iu])))
    return np.asarray(A)


def multichannel_distance(channels_u, channels_v, A) -> float:
    """-exp(-sum_i (1 - HI_i) / A_i); channels with A_i = 0 are skipped."""
    if len(channels_u) != len(channels_v) or len(channels_u) != len(A):
        raise ValueError("channel counts differ")
    tot = 0.0
    for bu, bv, a in zip(channels_u, channels_v, A):
        if a <= 0:
            log.warning("skipping channel with zero average distance")
            continue
        tot += (1.0 - histogram_intersection(bu, bv)) / a
    return -math.exp(-tot)


def cross_distance(channels_a, channels_b, A) -> np.ndarray:
    """Exponentiated intersection distances between every item of ``a`` and every item of ``b``.

    ``channels_*`` are lists of (m, V_i) arrays, one per channel.
    """
    tot = None
    for ca, cb, a in zip(channels_a, channels_b, A):
        if a <= 0:
            log.warning("skipping channel with zero average distance")
            continue
        term = (1.0 - kernels.pairwise_hi(np.asarray(ca, np.float64), np.asarray(cb, np.float64))) / a
        tot = term if tot is None else tot + term
    if tot is None:
        tot = np.zeros((len(channels_a[0]), len(channels_b[0])))
    return -np.exp(-tot)


def distance_matrix(channels, A=None) -> np.ndarray:
    channels = [np.asarray(c, dtype=np.float64) for c in channels]
    A = channel_averages(channels) if A is None else np.asarray(A, dtype=np.float64)
    return cross_distance(channels, channels, A)


# ---------------------------------------------------------------------------
# linkage


def cut_merges(merges, n: int, k: int) -> np.ndarray:
    """Labels after replaying the first n - k merges; clusters numbered by first member."""
    if not 1 <= k <= max(n, 1):
        raise ValueError(f"k={k} outside 1..{n}")
    parent = list(range(2 * n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for s in range(n - k):
        a, b = int(merges[s][0]), int(merges[s][1])
        parent[find(a)] = n + s
        parent[find(b)] = n + s
    roots = [find(i) for i in range(n)]
    relabel = {}
    return np.array([relabel.setdefault(r, len(relabel)) for r in roots], dtype=np.int64)


def complete_linkage(distances, k: int) -> ClusterResult:
    """Complete-linkage clustering of a square distance matrix, cut at k clusters."""
    D = np.ascontiguousarray(distances, dtype=np.float64)
    n = D.shape[0]
    merges = kernels.complete_linkage(D) if n > 1 else np.zeros((0, 4))
    return ClusterResult(cut_merges(merges, n, k), merges, k)


def default_k(n_intervals: int, fraction: float = 0.25) -> int:
    return max(1, min(n_intervals, math.ceil(fraction * n_intervals - 1e-9)))


def cluster_bows(bows, k: int, items=None, extra_channels=None) -> ClusterResult:
    """Cluster intervals by their BoWs; empty BoWs are excluded and reported.

    ``bows`` is a list of BoW; ``extra_channels`` optional lists of per-item
    histograms (precomputed appearance channels) aligned with ``bows``.
    """
    items = list(items) if items is not None else list(range(len(bows)))
    keep = [i for i, b in enumerate(bows) if not b.empty]
    excluded = [items[i] for i in range(len(bows)) if bows[i].empty]
    channels = [np.array([bows[i].weights for i in keep])]
    for ch in extra_channels or []:
        channels.append(np.array([normalize(ch[i]) for i in keep]))
    # a lone PoT channel is plain histogram-intersection distance (A = 1)
    A = channel_averages(channels) if len(channels) > 1 else np.ones(1)
    D = cross_distance(channels, channels, A)
    res = complete_linkage(D, min(k, len(keep)) if keep else 1) if keep else ClusterResult(
        np.zeros(0, np.int64), np.zeros((0, 4)), 0)
    res.items = [items[i] for i in keep]
    res.excluded = excluded
    res.params = {"k": int(k), "A": [float(a) for a in A]}
    return res

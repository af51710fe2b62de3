"""Consistent motion pairs: order-preserving matches of T-frame subsequences."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .cluster import normalize
from .datamodel import Interval

EMPTY_DISTANCE = -math.exp(-1.0)  # zero-descriptor frames count as maximally far


@dataclass(frozen=True)
class SeqRef:
    interval: Interval
    start: int  # first frame of the subsequence (shot frame index)

    @property
    def shot_id(self):
        return self.interval.shot_id

    def frames(self, T):
        return range(self.start, self.start + T)

    def to_json(self):
        return {"shot": self.interval.shot_id, "interval": [self.interval.start_frame, self.interval.end_frame],
                "source": self.interval.source, "start": self.start}

    @classmethod
    def from_json(cls, o):
        iv = Interval(o["shot"], int(o["interval"][0]), int(o["interval"][1]), o.get("source", "whole_shot"))
        return cls(iv, int(o["start"]))


@dataclass(frozen=True)
class Cmp:
    seq1: SeqRef
    seq2: SeqRef
    T: int
    score: float

    def to_json(self):
        return {"seq1": self.seq1.to_json(), "seq2": self.seq2.to_json(), "T": self.T, "score": self.score}

    @classmethod
    def from_json(cls, o):
        return cls(SeqRef.from_json(o["seq1"]), SeqRef.from_json(o["seq2"]), int(o["T"]), float(o["score"]))

    @property
    def key(self):
        return (self.seq1.shot_id, self.seq1.start, self.seq2.shot_id, self.seq2.start)


def frame_similarity(bows_i, bows_j, A=None) -> float:
    """Frame-level distance: one BoW per channel, PoT channel first.

    A frame with no PoTs (all-zero first channel) gets the maximal distance.
    """
    A = np.ones(len(bows_i)) if A is None else np.asarray(A, dtype=np.float64)
    if not np.any(bows_i[0]) or not np.any(bows_j[0]):
        return EMPTY_DISTANCE
    tot = 0.0
    for bu, bv, a in zip(bows_i, bows_j, A):
        if a <= 0:
            continue
        tot += (1.0 - float(np.minimum(bu, bv).sum())) / a
    return -math.exp(-tot)


def frame_distance_matrix(channels_p, channels_q, A=None) -> np.ndarray:
    """d[i, j] between every frame of two intervals.

    ``channels_*`` are lists of (frames, V_c) L1-normalized arrays, PoT channel first.
    """
    A = np.ones(len(channels_p)) if A is None else np.asarray(A, dtype=np.float64)
    tot = np.zeros((len(channels_p[0]), len(channels_q[0])))
    for cp, cq, a in zip(channels_p, channels_q, A):
        if a <= 0:
            continue
        tot += (1.0 - kernels.pairwise_hi(np.ascontiguousarray(cp, dtype=np.float64),
                                          np.ascontiguousarray(cq, dtype=np.float64))) / a
    d = -np.exp(-tot)
    empty_p = ~np.asarray(channels_p[0]).any(axis=1)
    empty_q = ~np.asarray(channels_q[0]).any(axis=1)
    d[empty_p, :] = EMPTY_DISTANCE
    d[:, empty_q] = EMPTY_DISTANCE
    return d


def rank_candidates(S, top_k: int = 10, suppress: int = 2):
    """Indices (i, j) of the best windows by score S, with near-duplicate suppression.

    Candidates are visited by score descending (ties: i, then j); one whose
    starts lie within ``suppress`` frames of a kept one in both sequences is
    skipped.
    """
    n, m = S.shape
    if n == 0 or m == 0:
        return []
    flat = S.ravel()
    ii, jj = np.divmod(np.arange(n * m), m)
    order = np.lexsort((jj, ii, -flat))
    kept = []
    for o in order:
        i, j = int(ii[o]), int(jj[o])
        if any(abs(i - a) <= suppress and abs(j - b) <= suppress for a, b in kept):
            continue
        kept.append((i, j))
        if len(kept) == top_k:
            break
    return kept


def extract_cmps(interval_p: Interval, interval_q: Interval, channels_p, channels_q, T: int = 10,
                 top_k: int = 10, suppress: int = 2, A=None) -> list[Cmp]:
    """Top CMPs between two intervals.

    ``channels_*`` hold per-frame BoWs of the interval frames only. The score
    of a start pair is the negated sum of frame distances along the diagonal,
    so larger means more similar.
    """
    n, m = len(interval_p), len(interval_q)
    if n < T or m < T:
        return []
    d = frame_distance_matrix(channels_p, channels_q, A)
    S = -kernels.diag_window_sums(np.ascontiguousarray(d), T)
    out = []
    for i, j in rank_candidates(S, top_k, suppress):
        out.append(Cmp(SeqRef(interval_p, interval_p.start_frame + i),
                       SeqRef(interval_q, interval_q.start_frame + j), T, float(S[i, j])))
    return out


def interval_channels(frame_bows, interval: Interval, extra=None):
    """Per-frame channel arrays restricted to an interval."""
    sl = slice(interval.start_frame, interval.end_frame + 1)
    chans = [frame_bows[sl]]
    for ch in extra or []:
        chans.append(normalize(np.asarray(ch)[sl]))
    return chans


def cluster_cmps(intervals, frame_bows: dict, T: int = 10, top_k: int = 10, suppress: int = 2,
                 extra: dict | None = None, A=None) -> list[Cmp]:
    """CMPs for every pair of intervals from different shots in one cluster.

    ``frame_bows`` maps shot id to its (N, V) L1-normalized per-frame BoWs.
    """
    ivs = sorted(intervals)
    out = []
    for p, q in itertools.combinations(ivs, 2):
        if p.shot_id == q.shot_id:
            continue
        cp = interval_channels(frame_bows[p.shot_id], p, (extra or {}).get(p.shot_id))
        cq = interval_channels(frame_bows[q.shot_id], q, (extra or {}).get(q.shot_id))
        out.extend(extract_cmps(p, q, cp, cq, T, top_k, suppress, A))
    return out

"""Split shots into single-behavior intervals at pauses and periodic stretches."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datamodel import Interval


@dataclass(frozen=True)
class PauseRun:
    start_frame: int
    end_frame: int

    def __len__(self):
        return self.end_frame - self.start_frame + 1

    def to_json(self):
        return {"start": self.start_frame, "end": self.end_frame}


@dataclass(frozen=True)
class PeriodicDetection:
    start_frame: int
    end_frame: int
    peak_height: float
    period: int
    frequency: int

    @property
    def window(self):
        return (self.start_frame, self.end_frame)

    def __len__(self):
        return self.end_frame - self.start_frame + 1

    def to_json(self):
        return {"start": self.start_frame, "end": self.end_frame, "peak_height": self.peak_height,
                "period": self.period, "frequency": self.frequency}

    @classmethod
    def from_json(cls, o):
        return cls(int(o["start"]), int(o["end"]), float(o["peak_height"]), int(o["period"]),
                   int(o["frequency"]))


@dataclass
class Partition:
    shot_id: str
    intervals: list
    pauses: list = field(default_factory=list)
    periodic: list = field(default_factory=list)
    dropped: list = field(default_factory=list)  # isolated single frames between pauses

    def to_json(self):
        return {"shot_id": self.shot_id,
                "intervals": [iv.to_json() for iv in self.intervals],
                "pauses": [p.to_json() for p in self.pauses],
                "periodic": [d.to_json() for d in self.periodic],
                "dropped": list(self.dropped)}

    @classmethod
    def from_json(cls, o):
        return cls(o["shot_id"], [Interval.from_json(x) for x in o["intervals"]],
                   [PauseRun(int(p["start"]), int(p["end"])) for p in o["pauses"]],
                   [PeriodicDetection.from_json(d) for d in o["periodic"]], list(o["dropped"]))


# ---------------------------------------------------------------------------
# pauses


def detect_pauses(scores, theta_f: float = 0.1, min_len: int = 3) -> list[PauseRun]:
    """Maximal runs of at least ``min_len`` frames scoring below ``theta_f``.

    NaN scores (undefined frames) never belong to a pause.
    """
    s = np.asarray(scores, dtype=np.float64)
    low = np.concatenate([[False], s < theta_f, [False]])  # NaN < x is False
    edges = np.flatnonzero(np.diff(low.astype(np.int8)))
    runs = []
    for a, b in zip(edges[::2], edges[1::2]):
        if b - a >= min_len:
            runs.append(PauseRun(int(a), int(b - 1)))
    return runs


# ---------------------------------------------------------------------------
# periodicity


def periodicity_spectrum(counts, min_len: int = 15):
    """Summed power spectrum of the per-codeword count series, DC removed.

    ``counts`` is (L, V). Returns the energy fractions of bins 1..L//2
    (summing to 1), all zeros when nothing varies, or None when L < min_len.
    """
    X = np.asarray(counts, dtype=np.float64)
    L = X.shape[0]
    if L < min_len:
        return None
    X = X[:, X.any(axis=0)] if X.ndim == 2 else X[:, None]
    P = _power(X[None])[0]
    tot = P.sum()
    return P / tot if tot > 0 else P


def _power(W):
    """Summed one-sided power for a batch of windows (B, l, V) -> (B, l//2)."""
    F = np.fft.rfft(W, axis=1)
    P = (F.real ** 2 + F.imag ** 2).sum(axis=2)
    return P[:, 1: W.shape[1] // 2 + 1]


def valid_bins(L: int, min_period: int = 5, min_freq: int = 3) -> np.ndarray:
    k = np.arange(1, L // 2 + 1)
    return (k >= min_freq) & (L / k >= min_period)


def peak_height(spectrum, L: int, min_period: int = 5, min_freq: int = 3):
    """(height, bin) of the strongest admissible bin.

    Height is that bin's energy fraction minus the mean fraction of the
    remaining bins, clipped at 0; a pure sinusoid scores 1 and a flat
    spectrum 0.
    """
    p = np.asarray(spectrum, dtype=np.float64)
    ok = valid_bins(L, min_period, min_freq)
    if p is None or not ok.any() or p.sum() <= 0:
        return 0.0, 0
    i = int(np.argmax(np.where(ok, p, -np.inf)))
    rest = (p.sum() - p[i]) / max(len(p) - 1, 1)
    return max(float(p[i] - rest), 0.0), i + 1


def _window_lengths(L, min_len, stride):
    lengths = list(range(min_len, L + 1, stride))
    if lengths and lengths[-1] != L:
        lengths.append(L)
    return lengths


def scan_windows(counts, min_period: int = 5, min_freq: int = 3, stride: int = 2):
    """Peak height of every admissible sub-window.

    Returns an array of rows (start, length, height, bin).
    """
    X = np.asarray(counts, dtype=np.float64)
    X = X[:, X.any(axis=0)]
    L = X.shape[0]
    min_len = min_period * min_freq
    rows = []
    if L < min_len or X.shape[1] == 0:
        return np.zeros((0, 4))
    for l in _window_lengths(L, min_len, stride):
        ok = valid_bins(l, min_period, min_freq)
        if not ok.any():
            continue
        starts = np.arange(0, L - l + 1, stride)
        W = np.stack([X[s:s + l] for s in starts])
        P = _power(W)
        tot = P.sum(axis=1)
        good = tot > 0
        if not good.any():
            continue
        starts, P, tot = starts[good], P[good], tot[good]
        frac = P / tot[:, None]
        masked = np.where(ok[None], frac, -np.inf)
        i = masked.argmax(axis=1)
        pk = frac[np.arange(len(i)), i]
        rest = (1.0 - pk) / max(frac.shape[1] - 1, 1)
        h = np.maximum(pk - rest, 0.0)
        rows.append(np.stack([starts, np.full(len(starts), l), h, i + 1], axis=1))
    return np.concatenate(rows) if rows else np.zeros((0, 4))


def detect_periodic_subintervals(counts, theta_h: float = 0.1, offset: int = 0,
                                 min_period: int = 5, min_freq: int = 3,
                                 stride: int = 2) -> list[PeriodicDetection]:
    """Find periodic sub-windows of an (L, V) per-frame count sequence.

    In each unprocessed segment the most significant window (peak height
    times the square root of its length, which discounts short windows whose
    peaks are mostly noise) is a detection if its height reaches ``theta_h``;
    the segments left and right of it are searched again.
    """
    X = np.asarray(counts, dtype=np.float64)
    out = []
    todo = [(0, X.shape[0])]
    while todo:
        a, b = todo.pop()
        rows = scan_windows(X[a:b], min_period, min_freq, stride)
        if not len(rows):
            continue
        sig = rows[:, 2] * np.sqrt(rows[:, 1])
        # ties: earliest start, then shortest window
        best = np.lexsort((rows[:, 1], rows[:, 0], -sig))[0]
        s, l, h, k = rows[best]
        if h < theta_h:
            continue
        s, l, k = int(s), int(l), int(k)
        out.append(PeriodicDetection(offset + a + s, offset + a + s + l - 1, float(h),
                                     int(round(l / k)), k))
        todo.append((a, a + s))
        todo.append((a + s + l, b))
    return sorted(out, key=lambda d: d.start_frame)


# ---------------------------------------------------------------------------
# partition


def segments_between(n_frames: int, pauses) -> list[tuple[int, int]]:
    """Inclusive frame ranges not covered by pause runs."""
    segs, cur = [], 0
    for p in sorted(pauses, key=lambda p: p.start_frame):
        if p.start_frame > cur:
            segs.append((cur, p.start_frame - 1))
        cur = max(cur, p.end_frame + 1)
    if cur <= n_frames - 1:
        segs.append((cur, n_frames - 1))
    return segs


def partition_shot(shot_id: str, n_frames: int, pauses, periodic, min_len: int = 2) -> Partition:
    """Cut the shot at pauses (pause frames excluded) and periodic window edges.

    Pieces shorter than ``min_len`` join their left neighbor within the same
    segment (or the right one at a segment start). A whole segment shorter
    than ``min_len`` is boxed in by pauses and is reported as dropped.
    """
    pauses = sorted(pauses, key=lambda p: p.start_frame)
    periodic = sorted(periodic, key=lambda d: d.start_frame)
    intervals, dropped = [], []
    for a, b in segments_between(n_frames, pauses):
        if b - a + 1 < min_len:
            dropped.extend(range(a, b + 1))
            continue
        cuts = set()
        for d in periodic:
            s, e = max(d.start_frame, a), min(d.end_frame, b)
            if s > e:
                continue
            cuts.add(s)
            cuts.add(e + 1)
        bounds = sorted({a, b + 1} | {c for c in cuts if a < c <= b})
        pieces = [[s, e - 1] for s, e in zip(bounds, bounds[1:])]
        merged = []
        for p in pieces:
            if merged and p[1] - p[0] + 1 < min_len:
                merged[-1][1] = p[1]
            elif merged and merged[-1][1] - merged[-1][0] + 1 < min_len:
                merged[-1][1] = p[1]
            else:
                merged.append(p)
        if pieces and len(pieces) > 1:
            source = "periodic_split"
        elif pauses:
            source = "pause_split"
        else:
            source = "whole_shot"
        intervals.extend(Interval(shot_id, s, e, source) for s, e in merged)
    return Partition(shot_id, intervals, list(pauses), list(periodic), dropped)


def partition(shot_id: str, sigma, frame_counts_, theta_f: float = 0.1, theta_h: float = 0.1,
              min_pause: int = 3, min_len: int = 2, use_pauses: bool = True,
              use_periodicity: bool = True, stride: int = 2) -> Partition:
    """Full partitioning of one shot.

    ``sigma`` is the per-frame flow variation and ``frame_counts_`` the
    (N, V) per-frame PoT codeword counts. Periodicity is searched inside
    each pause-free segment.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    n = len(sigma)
    pauses = detect_pauses(sigma, theta_f, min_pause) if use_pauses else []
    periodic = []
    if use_periodicity:
        X = np.asarray(frame_counts_, dtype=np.float64)
        for a, b in segments_between(n, pauses):
            periodic.extend(detect_periodic_subintervals(X[a:b + 1], theta_h, offset=a, stride=stride))
    return partition_shot(shot_id, n, pauses, periodic, min_len)


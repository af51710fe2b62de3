"""Pairs of trajectories: frame pruning, pair scoring, selection and descriptors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .datamodel import Shot, Trajectory, foreground_trajectories

DEGENERATE_TOL = 1e-9


class NoForegroundError(ValueError):
    """Raised when a frame has an empty foreground mask."""


class DegeneratePairError(ValueError):
    """Raised when a pair has (numerically) zero total relative displacement."""


@dataclass(frozen=True)
class PotDescriptor:
    theta: float
    disp: np.ndarray  # (n-1, 2)

    def as_vector(self):
        return np.concatenate([[self.theta], np.asarray(self.disp).ravel()])

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=np.float64)
        return cls(float(v[0]), v[1:].reshape(-1, 2))


@dataclass(frozen=True)
class PoT:
    anchor_id: int
    swing_id: int
    start_frame: int
    n: int
    descriptor: PotDescriptor


@dataclass(frozen=True)
class ArticulationScore:
    """Per-frame windowed score ``s`` and per-frame coefficient of variation ``sigma``.

    Undefined entries are NaN (window past the shot end, empty mask or absent flow).
    """

    s: np.ndarray
    sigma: np.ndarray
    n: int


class PotSet:
    """Columnar collection of PoTs for one shot."""

    def __init__(self, shot_id, n, anchor_ids, swing_ids, start_frames, descriptors):
        self.shot_id = shot_id
        self.n = int(n)
        self.anchor_ids = np.asarray(anchor_ids, dtype=np.int64).reshape(-1)
        self.swing_ids = np.asarray(swing_ids, dtype=np.int64).reshape(-1)
        self.start_frames = np.asarray(start_frames, dtype=np.int64).reshape(-1)
        self.descriptors = np.asarray(descriptors, dtype=np.float64).reshape(-1, 2 * (self.n - 1) + 1)

    def __len__(self):
        return len(self.anchor_ids)

    def __iter__(self):
        for i in range(len(self)):
            yield PoT(int(self.anchor_ids[i]), int(self.swing_ids[i]), int(self.start_frames[i]),
                      self.n, PotDescriptor.from_vector(self.descriptors[i]))

    def span_mask(self, first, last):
        """PoTs whose n-frame span intersects frames first..last."""
        return (self.start_frames <= last) & (self.start_frames + self.n - 1 >= first)

    def to_json(self):
        return {
            "shot_id": self.shot_id,
            "n": self.n,
            "pots": [
                {"anchor_id": int(a), "swing_id": int(s), "start_frame": int(f),
                 "theta": float(d[0]), "disp": d[1:].tolist()}
                for a, s, f, d in zip(self.anchor_ids, self.swing_ids, self.start_frames, self.descriptors)
            ],
        }

    @classmethod
    def from_json(cls, obj):
        n = int(obj["n"])
        pots = obj["pots"]
        desc = np.array([[p["theta"], *p["disp"]] for p in pots], dtype=np.float64)
        return cls(obj["shot_id"], n, [p["anchor_id"] for p in pots], [p["swing_id"] for p in pots],
                   [p["start_frame"] for p in pots], desc.reshape(-1, 2 * (n - 1) + 1))

    @classmethod
    def concat(cls, shot_id, n, parts):
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls(shot_id, n, [], [], [], np.zeros((0, 2 * (n - 1) + 1)))
        return cls(shot_id, n, np.concatenate([p.anchor_ids for p in parts]),
                   np.concatenate([p.swing_ids for p in parts]),
                   np.concatenate([p.start_frames for p in parts]),
                   np.concatenate([p.descriptors for p in parts]))

    def __eq__(self, other):
        return (isinstance(other, PotSet) and self.shot_id == other.shot_id and self.n == other.n
                and np.array_equal(self.anchor_ids, other.anchor_ids)
                and np.array_equal(self.swing_ids, other.swing_ids)
                and np.array_equal(self.start_frames, other.start_frames)
                and np.array_equal(self.descriptors, other.descriptors))

    __hash__ = None


# ---------------------------------------------------------------------------
# foreground statistics


def median_foreground_velocity(frame) -> np.ndarray:
    """Component-wise median of the flow over mask pixels."""
    if frame.flow is None:
        raise ValueError("frame has no flow")
    if not frame.mask.any():
        raise NoForegroundError("empty foreground mask")
    f = frame.flow[frame.mask].astype(np.float64)
    return np.median(f, axis=0)


def median_velocity_track(shot: Shot) -> np.ndarray:
    """(N, 2) median foreground velocity per frame; NaN where undefined."""
    vm = np.full((shot.n_frames, 2), np.nan)
    for k in range(shot.n_frames):
        if shot.has_flow(k) and shot.masks[k].any():
            vm[k] = median_foreground_velocity(shot.frame(k))
    return vm


def flow_variation(flow, mask) -> float:
    """Coefficient of variation (std / mean) of flow magnitude over the mask.

    A zero mean magnitude (static scene) gives 0.
    """
    mags = np.hypot(*flow[mask].astype(np.float64).T)
    mean = mags.mean()
    if mean <= 0.0:
        return 0.0
    return float(mags.std() / mean)


def articulation_scores(shot: Shot, n: int = 10) -> ArticulationScore:
    sigma = np.full(shot.n_frames, np.nan)
    for k in range(shot.n_frames):
        if shot.has_flow(k) and shot.masks[k].any():
            sigma[k] = flow_variation(shot.flow[k], shot.masks[k])
    N = shot.n_frames
    s = np.full(N, np.nan)
    if N >= n:
        c = np.concatenate([[0.0], np.cumsum(sigma)])
        s[: N - n + 1] = (c[n:] - c[:-n]) / n  # NaN propagates through the window
    return ArticulationScore(s=s, sigma=sigma, n=n)


def articulation_score(shot: Shot, f: int, n: int = 10) -> float:
    """Windowed articulation score s(f); NaN when undefined."""
    if f < 0 or f + n > shot.n_frames:
        return float("nan")
    vals = []
    for i in range(f, f + n):
        if not (shot.has_flow(i) and shot.masks[i].any()):
            return float("nan")
        vals.append(flow_variation(shot.flow[i], shot.masks[i]))
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# scoring and descriptors


def window_velocities(pos):
    """Velocities over a window of positions (..., n, 2); last frame repeats the last difference."""
    v = np.diff(pos, axis=-2)
    return np.concatenate([v, v[..., -1:, :]], axis=-2)


def pot_score(anchor: Trajectory, swing: Trajectory, f: int, n: int, vm) -> float:
    """Sum over the window of |v_swing - v_m| - |v_anchor - v_m|."""
    last = f + n - 1
    if not (anchor.spans(f, last) and swing.spans(f, last)):
        raise ValueError("trajectories must span the window")
    vm = np.asarray(vm, dtype=np.float64)[f:f + n]
    va = window_velocities(anchor.window(f, last))
    vs = window_velocities(swing.window(f, last))
    return float(np.sum(np.linalg.norm(vs - vm, axis=1) - np.linalg.norm(va - vm, axis=1)))


def descriptors_from_windows(anchor_pos, swing_pos):
    """Batch descriptors from (K, n, 2) anchor and swing windows.

    Returns (desc (K, 2(n-1)+1), total displacement D (K,)). Rows with
    D below tolerance are left as NaN.
    """
    r = np.asarray(swing_pos, dtype=np.float64) - np.asarray(anchor_pos, dtype=np.float64)
    d = np.diff(r, axis=1)
    D = np.linalg.norm(d, axis=2).sum(axis=1)
    theta = np.arctan2(r[:, 0, 1], r[:, 0, 0])
    with np.errstate(invalid="ignore", divide="ignore"):
        disp = d / D[:, None, None]
    desc = np.concatenate([theta[:, None], disp.reshape(len(r), -1)], axis=1)
    desc[D < DEGENERATE_TOL] = np.nan
    return desc, D


def pot_descriptor(anchor: Trajectory, swing: Trajectory, f: int, n: int) -> PotDescriptor:
    last = f + n - 1
    if not (anchor.spans(f, last) and swing.spans(f, last)):
        raise ValueError("trajectories must span the window")
    desc, D = descriptors_from_windows(anchor.window(f, last)[None], swing.window(f, last)[None])
    if D[0] < DEGENERATE_TOL:
        raise DegeneratePairError(f"total displacement {D[0]:.3g} below tolerance")
    return PotDescriptor.from_vector(desc[0])


# ---------------------------------------------------------------------------
# selection


def n_selected(theta_p: float, n_candidates: int) -> int:
    """ceil(theta_p * n_candidates), robust to float round-up (0.07 * 100 -> 7, not 8)."""
    return int(math.ceil(theta_p * n_candidates - 1e-9))


def _cap(trajs, max_candidates):
    trajs = sorted(trajs, key=lambda t: t.traj_id)
    if max_candidates is None or len(trajs) <= max_candidates:
        return trajs
    idx = np.unique(np.round(np.linspace(0, len(trajs) - 1, max_candidates)).astype(int))
    return [trajs[i] for i in idx]


def select_pots(shot: Shot, trajectories, f: int, n: int = 10, theta_p: float = 0.15,
                theta_f: float = 0.1, max_candidates: int | None = 500,
                articulation: ArticulationScore | None = None, vm=None) -> PotSet:
    """PoTs starting at frame ``f``.

    Candidates are all ordered pairs of the given trajectories spanning
    ``f..f+n-1``; they are ranked by score (ties: anchor id, swing id) and the
    top ceil(theta_p * #candidates) kept, minus degenerate pairs.
    """
    empty = PotSet(shot.shot_id, n, [], [], [], np.zeros((0, 2 * (n - 1) + 1)))
    s_f = articulation.s[f] if articulation is not None else articulation_score(shot, f, n)
    if not np.isfinite(s_f) or s_f < theta_f:
        return empty
    last = f + n - 1
    cands = _cap([t for t in trajectories if t.spans(f, last)], max_candidates)
    m = len(cands)
    if m < 2:
        return empty
    if vm is None:
        vm = median_velocity_track(shot)
    vmw = np.asarray(vm, dtype=np.float64)[f:f + n]
    if not np.all(np.isfinite(vmw)):
        return empty
    pos = np.stack([t.window(f, last) for t in cands])  # (m, n, 2)
    dev = np.linalg.norm(window_velocities(pos) - vmw[None], axis=2).sum(axis=1)
    ids = np.array([t.traj_id for t in cands], dtype=np.int64)
    score = dev[None, :] - dev[:, None]  # [anchor, swing]
    ai, si = np.nonzero(~np.eye(m, dtype=bool))
    sc = score[ai, si]
    k = n_selected(theta_p, len(sc))
    if k <= 0:
        return empty
    if k < len(sc):
        kth = np.partition(-sc, k - 1)[k - 1]
        keep = np.nonzero(-sc <= kth)[0]  # includes every tie at the boundary
        ai, si, sc = ai[keep], si[keep], sc[keep]
    order = np.lexsort((ids[si], ids[ai], -sc))[:k]
    ai, si = ai[order], si[order]
    desc, D = descriptors_from_windows(pos[ai], pos[si])
    ok = D >= DEGENERATE_TOL
    return PotSet(shot.shot_id, n, ids[ai][ok], ids[si][ok], np.full(int(ok.sum()), f), desc[ok])


def extract_pots(shot: Shot, trajectories=None, n: int = 10, theta_p: float = 0.15,
                 theta_f: float = 0.1, max_candidates: int | None = 500) -> PotSet:
    """Select PoTs at every frame of a shot.

    Trajectories must lie on the foreground at the PoT's first frame.
    """
    trajectories = shot.trajectories if trajectories is None else trajectories
    art = articulation_scores(shot, n)
    vm = median_velocity_track(shot)
    parts = []
    for f in range(shot.n_frames - n + 1):
        if not np.isfinite(art.s[f]) or art.s[f] < theta_f:
            continue
        spanning = [t for t in trajectories if t.spans(f, f + n - 1)]
        fg = foreground_trajectories(shot, spanning, frame=f)
        parts.append(select_pots(shot, fg, f, n, theta_p, theta_f, max_candidates, art, vm))
    return PotSet.concat(shot.shot_id, n, parts)

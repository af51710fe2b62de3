"""Global CMP alignment: trajectory matching and RANSAC homography fitting.

A homography maps points of the second sequence (v) onto the first (u).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .datamodel import Shot


class FitError(ValueError):
    """Degenerate or insufficient correspondences."""


class StaticTrajectory(ValueError):
    """Trajectory with zero total displacement."""


# ---------------------------------------------------------------------------
# foreground geometry


def mask_stats(mask):
    """(center of mass, bbox diagonal, bbox corners) of a binary mask, or None when empty."""
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return None
    com = np.array([xs.mean(), ys.mean()])
    x0, x1, y0, y1 = xs.min(), xs.max(), ys.min(), ys.max()
    diag = math.hypot(x1 - x0 + 1, y1 - y0 + 1)
    corners = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=np.float64)
    return com, diag, corners


# ---------------------------------------------------------------------------
# descriptors and matching


@dataclass(frozen=True)
class ModifiedTs:
    ts: np.ndarray  # 2(T-1) normalized displacements
    offset: np.ndarray  # (COM - start) / bbox diagonal

    @property
    def vector(self):
        return np.concatenate([self.ts, self.offset])


def modified_ts(points, mask=None, *, com=None, diag=None) -> ModifiedTs:
    """Trajectory shape plus the normalized offset to the mask's center of mass.

    ``mask`` is the foreground of the trajectory's first frame; ``com`` and
    ``diag`` may be given directly instead.
    """
    P = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if mask is not None:
        st = mask_stats(mask)
        if st is None:
            raise ValueError("empty mask at the trajectory's start frame")
        com, diag = st[0], st[1]
    if com is None or diag is None or diag <= 0:
        raise ValueError("need a mask or a center of mass with a positive diagonal")
    d = np.diff(P, axis=0)
    tot = np.linalg.norm(d, axis=1).sum()
    if tot < 1e-9:
        raise StaticTrajectory("trajectory does not move")
    return ModifiedTs((d / tot).ravel(), (np.asarray(com, dtype=np.float64) - P[0]) / diag)


@dataclass(frozen=True)
class Track:
    """A T-frame trajectory piece inside one CMP sequence."""

    traj_id: int
    offset: int  # first frame relative to the sequence start
    points: np.ndarray  # (T, 2)
    descriptor: np.ndarray
    label: str | None = None


@dataclass(frozen=True)
class TrajectoryMatch:
    track_u: Track
    track_v: Track
    distance: float

    @property
    def offset(self):
        return self.track_u.offset

    @property
    def points_u(self):
        return self.track_u.points

    @property
    def points_v(self):
        return self.track_v.points


def sequence_tracks(shot: Shot, start: int, T: int = 10, trajectories=None) -> list[Track]:
    """T-frame pieces of the foreground trajectories of one CMP sequence.

    A trajectory alive at the sequence start contributes its piece from
    offset 0; one born inside the window contributes from its birth frame.
    Pieces must lie within their trajectory, start on the mask and move.
    """
    trajectories = shot.trajectories if trajectories is None else trajectories
    stats = {}
    out = []
    for t in trajectories:
        if t.start_frame <= start:
            s = start
        elif t.start_frame < start + T:
            s = t.start_frame
        else:
            continue
        if t.end_frame < s + T - 1:
            continue
        if s not in stats:
            stats[s] = mask_stats(shot.masks[s])
        st = stats[s]
        if st is None:
            continue
        pts = t.window(s, s + T - 1)
        x, y = pts[0]
        r, c = int(round(y)), int(round(x))
        if not (0 <= r < shot.height and 0 <= c < shot.width and shot.masks[s][r, c]):
            continue
        try:
            desc = modified_ts(pts, com=st[0], diag=st[1]).vector
        except StaticTrajectory:
            continue
        out.append(Track(t.traj_id, s - start, np.array(pts), desc, t.label))
    return out


def match_trajectories(tracks_u, tracks_v) -> list[TrajectoryMatch]:
    """Nearest neighbor in ``tracks_v`` for every track of ``tracks_u`` with the same offset."""
    by_off = {}
    for tv in tracks_v:
        by_off.setdefault(tv.offset, []).append(tv)
    out = []
    for tu in tracks_u:
        cands = by_off.get(tu.offset)
        if not cands:
            continue
        D = np.stack([c.descriptor for c in cands])
        d = np.linalg.norm(D - tu.descriptor, axis=1)
        j = int(np.argmin(d))  # ties to the lowest index
        out.append(TrajectoryMatch(tu, cands[j], float(d[j])))
    return out


# ---------------------------------------------------------------------------
# homography


@dataclass(frozen=True)
class Homography:
    H: np.ndarray  # 3x3, largest-magnitude entry equal to 1

    @classmethod
    def from_matrix(cls, H):
        H = np.asarray(H, dtype=np.float64).reshape(3, 3)
        if not np.all(np.isfinite(H)):
            raise FitError("non-finite homography")
        i = np.unravel_index(np.argmax(np.abs(H)), H.shape)
        if H[i] == 0:
            raise FitError("zero homography")
        H = H / H[i]
        if np.linalg.cond(H) > 1e14:
            raise FitError("singular homography")
        return cls(H)

    @classmethod
    def identity(cls):
        return cls(np.eye(3))

    def apply(self, pts):
        P = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        q = P @ self.H[:, :2].T + self.H[:, 2]
        w = q[:, 2:3]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(np.abs(w) > 1e-12, q[:, :2] / w, np.inf)
        return out

    def inverse(self) -> "Homography":
        return Homography.from_matrix(np.linalg.inv(self.H))

    def to_json(self):
        return {"type": "homography", "H": self.H.ravel().tolist()}

    @classmethod
    def from_json(cls, o):
        return cls(np.asarray(o["H"], dtype=np.float64).reshape(3, 3))


def _normalizer(P, w):
    """Similarity moving the weighted centroid to 0 and mean distance to sqrt(2)."""
    c = (P * w[:, None]).sum(0) / w.sum()
    d = (np.linalg.norm(P - c, axis=1) * w).sum() / w.sum()
    s = math.sqrt(2) / d if d > 1e-12 else 1.0
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def _collinear3(P, tol=1e-9):
    """Whether any three of the points are (nearly) collinear."""
    scale = max(np.ptp(P[:, 0]), np.ptp(P[:, 1]), 1e-12)
    for a, b, c in itertools.combinations(range(len(P)), 3):
        u, v = P[b] - P[a], P[c] - P[a]
        if abs(u[0] * v[1] - u[1] * v[0]) <= tol * scale * scale:
            return True
    return False


def dlt_system(src, dst, weights=None):
    """Weighted DLT design matrix in normalized coordinates plus the normalizers."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    w = np.ones(len(src)) if weights is None else np.asarray(weights, dtype=np.float64)
    Ts, Td = _normalizer(src, w), _normalizer(dst, w)
    s = src @ Ts[:2, :2].T + Ts[:2, 2]
    d = dst @ Td[:2, :2].T + Td[:2, 2]
    n = len(s)
    A = np.zeros((2 * n, 9))
    x, y, u, v = s[:, 0], s[:, 1], d[:, 0], d[:, 1]
    A[0::2, 0], A[0::2, 1], A[0::2, 2] = -x, -y, -1
    A[0::2, 6], A[0::2, 7], A[0::2, 8] = u * x, u * y, u
    A[1::2, 3], A[1::2, 4], A[1::2, 5] = -x, -y, -1
    A[1::2, 6], A[1::2, 7], A[1::2, 8] = v * x, v * y, v
    A *= np.sqrt(np.repeat(w, 2))[:, None]
    return A, Ts, Td


def fit_homography(src, dst, weights=None, box_src=None, box_dst=None, box_weight=1.0) -> Homography:
    """Normalized DLT least squares mapping ``src`` onto ``dst``.

    Optional box-corner pairs join the system with weight ``box_weight`` each.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    w = np.ones(len(src)) if weights is None else np.asarray(weights, dtype=np.float64)
    if box_src is not None and len(box_src):
        bs = np.asarray(box_src, dtype=np.float64).reshape(-1, 2)
        src = np.vstack([src, bs])
        dst = np.vstack([dst, np.asarray(box_dst, dtype=np.float64).reshape(-1, 2)])
        w = np.concatenate([w, np.full(len(bs), float(box_weight))])
    keep = w > 0
    src, dst, w = src[keep], dst[keep], w[keep]
    if len(src) < 4:
        raise FitError(f"{len(src)} correspondences, need at least 4")
    if len(src) == 4 and (_collinear3(src) or _collinear3(dst)):
        raise FitError("three of four points are collinear")
    A, Ts, Td = dlt_system(src, dst, w)
    _, sv, Vt = np.linalg.svd(A)
    if len(sv) < 8 or sv[7] <= 1e-10 * sv[0]:
        raise FitError("rank-deficient design")
    Hn = Vt[-1].reshape(3, 3)
    return Homography.from_matrix(np.linalg.inv(Td) @ Hn @ Ts)


def transfer_error(H: Homography, src, dst):
    return np.linalg.norm(H.apply(src) - np.asarray(dst, dtype=np.float64).reshape(-1, 2), axis=1)


# ---------------------------------------------------------------------------
# RANSAC


@dataclass(frozen=True)
class RansacParams:
    iterations: int = 2000
    confidence: float = 0.999
    threshold: float = 0.05  # fraction of the target bbox diagonal
    fg: bool = True
    fg_weight: float | None = None  # per box corner; default T/4
    min_inlier_ratio: float = 0.0

    def to_json(self):
        return {"iterations": self.iterations, "confidence": self.confidence,
                "threshold": self.threshold, "fg": self.fg, "fg_weight": self.fg_weight,
                "min_inlier_ratio": self.min_inlier_ratio}


@dataclass
class AlignmentResult:
    mapping: object  # Homography, Ttps or None
    inlier_ratio: float
    accepted: bool
    diagnostics: dict = field(default_factory=dict)

    def to_json(self):
        return {"mapping": self.mapping.to_json() if self.mapping is not None else None,
                "inlier_ratio": self.inlier_ratio, "accepted": self.accepted,
                "diagnostics": self.diagnostics}


@dataclass(frozen=True)
class FgBoxes:
    """Per-frame bounding-box corners of both sequences (frames with both masks)."""

    corners_u: np.ndarray  # (F, 4, 2)
    corners_v: np.ndarray
    diag_u: float  # mean target bbox diagonal

    @classmethod
    def from_shots(cls, shot_u: Shot, start_u: int, shot_v: Shot, start_v: int, T: int):
        cu, cv, du = [], [], []
        for t in range(T):
            su, sv = mask_stats(shot_u.masks[start_u + t]), mask_stats(shot_v.masks[start_v + t])
            if su is not None:
                du.append(su[1])
            if su is None or sv is None:
                continue
            cu.append(su[2])
            cv.append(sv[2])
        return cls(np.array(cu, dtype=np.float64).reshape(-1, 4, 2),
                   np.array(cv, dtype=np.float64).reshape(-1, 4, 2),
                   float(np.mean(du)) if du else math.nan)


def _needed_iterations(ratio, sample, confidence):
    if ratio <= 0:
        return math.inf
    if ratio >= 1:
        return 1
    return math.log(1 - confidence) / math.log(1 - ratio ** sample)


def _final_fit(src, dst, boxes, params, T):
    box_src = box_dst = None
    bw = 0.0
    if params.fg and boxes is not None and len(boxes.corners_u):
        box_src = boxes.corners_v.reshape(-1, 2)
        box_dst = boxes.corners_u.reshape(-1, 2)
        per_corner = params.fg_weight if params.fg_weight is not None else T / 4.0
        bw = per_corner / len(boxes.corners_u)  # one box worth of weight, spread over frames
    return fit_homography(src, dst, box_src=box_src, box_dst=box_dst, box_weight=bw)


def _result(H, ratio, n_in, n_tot, iters, params, method, seed):
    accepted = H is not None and n_in > 0 and ratio >= params.min_inlier_ratio
    return AlignmentResult(H, ratio, accepted,
                           {"method": method, "inliers": n_in, "total": n_tot, "iterations": iters,
                            "seed": seed, "fg": params.fg})


def ransac_im(matches, threshold_px: float, params: RansacParams = RansacParams(), seed=0,
              boxes: FgBoxes | None = None) -> AlignmentResult:
    """RANSAC over individual point correspondences."""
    if not matches:
        return _result(None, 0.0, 0, 0, 0, params, "im", seed)
    T = len(matches[0].points_u)
    src = np.concatenate([m.points_v for m in matches])
    dst = np.concatenate([m.points_u for m in matches])
    n = len(src)
    if n < 4:
        return _result(None, 0.0, 0, n, 0, params, "im", seed)
    rng = np.random.default_rng(seed)
    best, best_n, it, need = None, 0, 0, math.inf
    while it < params.iterations and it < need:
        it += 1
        idx = rng.choice(n, 4, replace=False)
        try:
            H = fit_homography(src[idx], dst[idx])
        except FitError:
            continue
        inl = transfer_error(H, src, dst) <= threshold_px
        k = int(inl.sum())
        if k > best_n:
            best, best_n = inl, k
            need = _needed_iterations(k / n, 4, params.confidence)
    if best is None:
        return _result(None, 0.0, 0, n, it, params, "im", seed)
    try:
        H = _final_fit(src[best], dst[best], boxes, params, T)
    except FitError:
        return _result(None, 0.0, 0, n, it, params, "im", seed)
    k = int((transfer_error(H, src, dst) <= threshold_px).sum())
    return _result(H, k / n, k, n, it, params, "im", seed)


def tm_inliers(errors, threshold_px):
    """Trajectory-level inliers: a match is an outlier only if more than half its points are."""
    E = np.asarray(errors)
    n_out = (E > threshold_px).sum(axis=1)
    return n_out * 2 <= E.shape[1]


def ransac_tm(matches, threshold_px: float, params: RansacParams = RansacParams(), seed=0,
              boxes: FgBoxes | None = None) -> AlignmentResult:
    """RANSAC sampling four whole trajectory matches per hypothesis."""
    m = len(matches)
    if m < 4:
        return _result(None, 0.0, 0, m, 0, params, "tm", seed)
    T = len(matches[0].points_u)
    src = np.stack([x.points_v for x in matches])  # (m, T, 2)
    dst = np.stack([x.points_u for x in matches])
    flat_s, flat_d = src.reshape(-1, 2), dst.reshape(-1, 2)
    rng = np.random.default_rng(seed)
    best, best_n, it, need = None, 0, 0, math.inf
    while it < params.iterations and it < need:
        it += 1
        idx = rng.choice(m, 4, replace=False)
        try:
            H = fit_homography(src[idx].reshape(-1, 2), dst[idx].reshape(-1, 2))
        except FitError:
            continue
        err = transfer_error(H, flat_s, flat_d).reshape(m, T)
        inl = tm_inliers(err, threshold_px)
        k = int(inl.sum())
        if k > best_n:
            best, best_n, best_err = inl, k, err
            need = _needed_iterations(k / m, 4, params.confidence)
    if best is None:
        return _result(None, 0.0, 0, m, it, params, "tm", seed)
    # refit on the inlier points of inlier matches
    pts_ok = (best_err <= threshold_px) & best[:, None]
    try:
        H = _final_fit(src[pts_ok], dst[pts_ok], boxes, params, T)
    except FitError:
        return _result(None, 0.0, 0, m, it, params, "tm", seed)
    k = int(tm_inliers(transfer_error(H, flat_s, flat_d).reshape(m, T), threshold_px).sum())
    return _result(H, k / m, k, m, it, params, "tm", seed)


def align_homography(shot_u: Shot, start_u: int, shot_v: Shot, start_v: int, T: int = 10,
                     params: RansacParams = RansacParams(), method: str = "tm", seed=0,
                     tracks_u=None, tracks_v=None) -> AlignmentResult:
    """Match trajectories of a CMP and fit its homography (seq2 onto seq1)."""
    tu = sequence_tracks(shot_u, start_u, T) if tracks_u is None else tracks_u
    tv = sequence_tracks(shot_v, start_v, T) if tracks_v is None else tracks_v
    matches = match_trajectories(tu, tv)
    boxes = FgBoxes.from_shots(shot_u, start_u, shot_v, start_v, T)
    if not math.isfinite(boxes.diag_u):
        return _result(None, 0.0, 0, len(matches), 0, params, method, seed)
    thr = params.threshold * boxes.diag_u
    fn = ransac_tm if method == "tm" else ransac_im
    res = fn(matches, thr, params, seed, boxes)
    res.diagnostics["matches"] = len(matches)
    return res

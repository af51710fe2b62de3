"""Non-rigid CMP alignment with time-varying thin plate splines.

Splines map points of the second sequence (v) onto the first (u), like the
homography they start from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .homography import FitError, Homography, mask_stats
from .kernels import bilinear_sample


class EmptyEdges(ValueError):
    """No edge point survives pruning."""


# ---------------------------------------------------------------------------
# edge points


def thin_points(P, spacing: float):
    """Greedy raster-order thinning: keep a point unless a kept one lies closer than ``spacing``."""
    if spacing <= 0 or len(P) < 2:
        return np.arange(len(P))
    tree = cKDTree(P)
    taken = np.zeros(len(P), bool)
    blocked = np.zeros(len(P), bool)
    for i in range(len(P)):
        if blocked[i]:
            continue
        taken[i] = True
        blocked[tree.query_ball_point(P[i], spacing - 1e-9)] = True
    return np.nonzero(taken)[0]


def extract_edge_points(edge_strength, mask, prune: float = 0.2, max_points: int = 1000,
                        sigma_frac: float = 0.05, spacing: float = 2.5):
    """Foreground-weighted edge points of one frame.

    weight = strength * exp(-DT / sigma), DT the distance to the mask and
    sigma a fraction of the mask's bbox diagonal. Points with weight <= prune
    are dropped, the rest thinned to a minimum ``spacing`` (so soft
    assignments can become decisive) and evenly subsampled to max_points.
    Returns (points (K, 2) as x, y; weights (K,)).
    """
    mask = np.asarray(mask, dtype=bool)
    st = mask_stats(mask)
    if st is None:
        raise EmptyEdges("empty mask")
    dt = ndimage.distance_transform_edt(~mask)
    w = np.asarray(edge_strength, dtype=np.float64) * np.exp(-dt / (sigma_frac * st[1]))
    ys, xs = np.nonzero(w > prune)
    if len(xs) == 0:
        raise EmptyEdges("no edge point above the prune threshold")
    keep = thin_points(np.stack([xs, ys], axis=1).astype(np.float64), spacing)
    ys, xs = ys[keep], xs[keep]
    if len(xs) > max_points:
        keep = np.unique(np.linspace(0, len(xs) - 1, max_points).round().astype(int))
        ys, xs = ys[keep], xs[keep]
    return np.stack([xs, ys], axis=1).astype(np.float64), w[ys, xs]


def propagate_edges(points, flow, backward: bool = False, iters: int = 20):
    """Move points one frame along the flow.

    Forward, ``flow`` is the field of the current frame. Backward, it is the
    previous frame's field and the motion is inverted by fixed-point
    iteration. Points leaving the grid come back as NaN.
    """
    P = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    h, w = flow.shape[:2]
    if not backward:
        Q = P + bilinear_sample(flow, P)
    else:
        Q = P.copy()
        for _ in range(iters):
            Q = P - bilinear_sample(flow, Q)
    out = (Q[:, 0] < 0) | (Q[:, 0] > w - 1) | (Q[:, 1] < 0) | (Q[:, 1] > h - 1)
    Q[out] = np.nan
    return Q


@dataclass
class EdgePointSet:
    """Edge points of a T-frame sequence, grouped by extraction frame.

    ``tracks[tau]`` is (T, K_tau, 2): the points extracted at frame tau,
    propagated to every frame with identical ordering. Points that left the
    grid in any frame are removed from all frames.
    """

    tracks: list
    weights: list
    diag: float  # mean foreground bbox diagonal

    @property
    def T(self):
        return len(self.tracks)

    def frame_points(self, t):
        """All points at frame t, in extraction-frame order."""
        return np.concatenate([tr[t] for tr in self.tracks])


def build_edge_set(shot, start: int, T: int = 10, prune: float = 0.2, max_points: int = 1000,
                   sigma_frac: float = 0.05, spacing: float = 2.5) -> EdgePointSet:
    tracks, weights, diags = [], [], []
    for tau in range(T):
        k = start + tau
        st = mask_stats(shot.masks[k])
        if st is not None:
            diags.append(st[1])
        try:
            pts, w = extract_edge_points(shot.edges[k], shot.masks[k], prune, max_points, sigma_frac, spacing)
        except EmptyEdges:
            tracks.append(np.zeros((T, 0, 2)))
            weights.append(np.zeros(0))
            continue
        tr = np.full((T, len(pts), 2), np.nan)
        tr[tau] = pts
        for t in range(tau + 1, T):
            tr[t] = propagate_edges(tr[t - 1], shot.flow[start + t - 1])
        for t in range(tau - 1, -1, -1):
            tr[t] = propagate_edges(tr[t + 1], shot.flow[start + t], backward=True)
        ok = np.isfinite(tr).all(axis=(0, 2))
        tracks.append(tr[:, ok])
        weights.append(w[ok])
    if not any(tr.shape[1] for tr in tracks):
        raise EmptyEdges("no edge points in the sequence")
    return EdgePointSet(tracks, weights, float(np.mean(diags)) if diags else math.nan)


# ---------------------------------------------------------------------------
# thin plate splines


def tps_kernel(r2):
    """U = r^2 log r^2 from squared distances, 0 at r = 0."""
    r2 = np.asarray(r2, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(r2 > 0, r2 * np.log(np.where(r2 > 0, r2, 1.0)), 0.0)


def _sqdist(A, B):
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
    return np.maximum(d, 0.0)


def _homog(P):
    return np.hstack([np.ones((len(P), 1)), P])


def _side_basis(C):
    """Orthonormal basis of {w : [1 x y]^T w = 0} over the control points."""
    Q, _ = np.linalg.qr(_homog(C), mode="complete")
    return Q[:, 3:]


@dataclass(frozen=True)
class Tps:
    affine: np.ndarray  # (2, 3): f(x) = affine[:, :2] x + affine[:, 2] + warp
    warp: np.ndarray  # (c, 2), zero sum and zero first moments
    control: np.ndarray  # (c, 2) in normalized coordinates
    lam: float
    center: np.ndarray = field(default_factory=lambda: np.zeros(2))
    scale: float = 1.0

    def __call__(self, pts):
        P = (np.asarray(pts, dtype=np.float64).reshape(-1, 2) - self.center) / self.scale
        out = P @ self.affine[:, :2].T + self.affine[:, 2]
        if len(self.control):
            out = out + tps_kernel(_sqdist(P, self.control)) @ self.warp
        return out * self.scale + self.center

    apply = __call__

    def bending(self) -> float:
        """w^T K w summed over both coordinates (normalized units)."""
        if not len(self.control):
            return 0.0
        K = tps_kernel(_sqdist(self.control, self.control))
        return float(np.einsum("ik,ij,jk->", self.warp, K, self.warp))

    def to_json(self):
        return {"type": "tps", "affine": self.affine.tolist(), "warp": self.warp.tolist(),
                "control": self.control.tolist(), "lambda": self.lam,
                "center": self.center.tolist(), "scale": self.scale}

    @classmethod
    def from_json(cls, o):
        return cls(np.asarray(o["affine"], float).reshape(2, 3), np.asarray(o["warp"], float).reshape(-1, 2),
                   np.asarray(o["control"], float).reshape(-1, 2), float(o["lambda"]),
                   np.asarray(o["center"], float), float(o["scale"]))


def _check_spread(P):
    if len(P) < 3:
        raise FitError(f"{len(P)} source points, need at least 3")
    s = np.linalg.svd(P - P.mean(0), compute_uv=False)
    if s[1] <= 1e-9 * max(s[0], 1e-300):
        raise FitError("collinear source points")


class TpsBasis:
    """Design matrices for fixed sources and control points.

    Refitting against new targets, weights or lambda only needs a small
    solve, which is what the annealing loop does many times.
    """

    def __init__(self, src, control=None, center=None, scale: float = 1.0):
        self.center = np.zeros(2) if center is None else np.asarray(center, dtype=np.float64)
        self.scale = float(scale)
        S = (np.asarray(src, dtype=np.float64).reshape(-1, 2) - self.center) / self.scale
        C = S if control is None else (np.asarray(control, dtype=np.float64).reshape(-1, 2) - self.center) / self.scale
        self.S, self.C = S, C
        if len(C) > 3:
            _check_spread(C)
            self.N = _side_basis(C)
            self.Phi = np.hstack([_homog(S), tps_kernel(_sqdist(S, C)) @ self.N])
            self.R = np.zeros((self.Phi.shape[1], self.Phi.shape[1]))
            self.R[3:, 3:] = self.N.T @ tps_kernel(_sqdist(C, C)) @ self.N
        else:
            self.N = np.zeros((len(C), 0))
            self.Phi = _homog(S)
            self.R = np.zeros((3, 3))

    def solve(self, dst, weights=None, lam: float = 0.0):
        """Coefficients theta for targets in working coordinates."""
        w = np.ones(len(self.S)) if weights is None else np.asarray(weights, dtype=np.float64)
        _check_spread(self.S[w > 0])
        G = self.Phi.T @ (self.Phi * w[:, None]) + lam * self.R
        b = self.Phi.T @ (dst * w[:, None])
        try:
            theta = np.linalg.solve(G, b)
        except np.linalg.LinAlgError:
            theta = np.linalg.lstsq(G, b, rcond=None)[0]
        if not np.all(np.isfinite(theta)):
            raise FitError("TPS solve failed")
        return theta

    def values(self, theta):
        """Mapped sources in working coordinates."""
        return self.Phi @ theta

    def bending(self, theta):
        g = theta[3:]
        return float(np.einsum("ik,ij,jk->", g, self.R[3:, 3:], g)) if len(g) else 0.0

    def to_tps(self, theta, lam) -> Tps:
        affine = np.hstack([theta[1:3].T, theta[0][:, None]])
        warp = self.N @ theta[3:] if self.N.shape[1] else np.zeros((len(self.C), 2))
        return Tps(affine, warp, self.C, float(lam), self.center, self.scale)

    def fit(self, dst, weights=None, lam: float = 0.0) -> Tps:
        D = (np.asarray(dst, dtype=np.float64).reshape(-1, 2) - self.center) / self.scale
        return self.to_tps(self.solve(D, weights, lam), lam)


def tps_fit(src, dst, weights=None, lam: float = 0.0, control=None, center=None,
            scale: float = 1.0) -> Tps:
    """Regularized TPS least squares from ``src`` onto ``dst``.

    Minimizes sum_i w_i |dst_i - f(src_i)|^2 + lam * w^T K w over the affine
    part and warp coefficients on ``control`` (default: the sources), with the
    side conditions built into the parameterization. ``center``/``scale``
    define the working coordinates.
    """
    return TpsBasis(src, control, center, scale).fit(dst, weights, lam)


# ---------------------------------------------------------------------------
# TPS-RPM


@dataclass(frozen=True)
class AnnealingSchedule:
    T_init: float
    T_final: float
    rate: float = 0.93

    def __post_init__(self):
        if not (self.T_init > self.T_final > 0):
            raise ValueError("need T_init > T_final > 0")
        if not 0 < self.rate < 1:
            raise ValueError("rate must lie in (0, 1)")

    def temperatures(self):
        n = math.ceil(math.log(self.T_final / self.T_init) / math.log(self.rate))
        return [self.T_init * self.rate ** k for k in range(n)]


@dataclass(frozen=True)
class RpmParams:
    rate: float = 0.93
    final_px: float = 2.0  # T_final = final_px^2 (pixels)
    start_px: float = 8.0  # T_init is at least start_px^2 (pixels)
    lambda_init: float = 1.0
    inner: int = 2  # M/f alternations per temperature
    sinkhorn: int = 5
    outlier_weight: float = 0.01
    max_control: int = 300
    harden: float = 0.5
    patience: int = 5  # consecutive energy increases before abort
    outlier_cost: float = 0.05  # per unmatched point, fraction of the diagonal (squared)

    def to_json(self):
        return dict(self.__dict__)


@dataclass
class RpmResult:
    tps: Tps
    M: np.ndarray  # (K_u, K_v + 1), last column = outlier
    energies: list
    aborted: bool = False


def _control_subset(P, cap):
    if len(P) <= cap:
        return P
    return P[np.unique(np.linspace(0, len(P) - 1, cap).round().astype(int))]


def soft_assign(U, FV, tau, T_out, centroid, sinkhorn=5, outlier_weight=0.01):
    """Row-normalized soft correspondences with an outlier column.

    Entries are Gaussian densities at temperature ``tau``; the outlier column
    is a wide Gaussian at ``T_out`` around ``centroid``, scaled by a prior
    ``outlier_weight``. Alternating normalization ends on rows, so every row
    sums to 1.
    """
    d2 = _sqdist(U, FV)
    logm = -d2 / tau - math.log(tau)
    lo = -((U - centroid) ** 2).sum(1) / T_out - math.log(T_out) + math.log(outlier_weight)
    L = np.hstack([logm, lo[:, None]])
    L -= L.max(axis=1, keepdims=True)
    M = np.exp(L)
    for _ in range(sinkhorn):
        M /= M.sum(axis=1, keepdims=True)
        col = M[:, :-1].sum(axis=0)
        M[:, :-1] /= np.maximum(col, 1.0)  # columns never hold more than one unit
    M /= M.sum(axis=1, keepdims=True)
    return M


def _normalization(U):
    lo, hi = U.min(0), U.max(0)
    diag = float(np.hypot(*(hi - lo)))
    return U.mean(0), max(diag, 1e-9)


def tps_rpm(U, V, init: Homography | None = None, params: RpmParams = RpmParams(),
            schedule: AnnealingSchedule | None = None, frame=None) -> RpmResult:
    """Deterministic-annealing TPS-RPM mapping source ``V`` onto target ``U``.

    Work happens in coordinates centered on ``U`` and scaled by its bbox
    diagonal (``frame`` = (center, scale) overrides this).
    """
    U = np.asarray(U, dtype=np.float64).reshape(-1, 2)
    V = np.asarray(V, dtype=np.float64).reshape(-1, 2)
    if not len(U) or not len(V):
        raise EmptyEdges("empty point set")
    center, scale = _normalization(U) if frame is None else frame
    Un = (U - center) / scale
    Vn = (V - center) / scale
    basis = TpsBasis(Vn, _control_subset(Vn, params.max_control))
    H = init if init is not None else Homography.identity()
    Hn = (H.apply(V) - center) / scale
    theta0 = basis.solve(Hn, lam=1e-6)  # TPS through the homography
    fv = basis.values(theta0)
    if schedule is None:
        nn = _sqdist(Un, fv).min(axis=1).mean()
        T_final = (params.final_px / scale) ** 2
        T_init = max(nn, (params.start_px / scale) ** 2, T_final / params.rate)
        schedule = AnnealingSchedule(T_init, T_final, params.rate)
    T_out = schedule.T_init
    centroid = fv.mean(0)
    energies = []
    rising = 0
    theta, lam, M = theta0, 1e-6, None
    for tau in schedule.temperatures():
        lam = params.lambda_init * tau / schedule.T_init
        for _ in range(params.inner):
            M = soft_assign(Un, fv, tau, T_out, centroid, params.sinkhorn, params.outlier_weight)
            mass = M[:, :-1].sum(axis=0)
            ok = mass > 1e-6
            Y = np.where(ok[:, None], (M[:, :-1].T @ Un) / np.maximum(mass, 1e-12)[:, None], fv)
            try:
                theta = basis.solve(Y, np.where(ok, mass, 0.0), lam)
            except FitError:
                break
            fv = basis.values(theta)
        e = float((M[:, :-1] * _sqdist(Un, fv)).sum() + lam * basis.bending(theta))
        if energies and e > energies[-1]:
            rising += 1
            if rising >= params.patience:
                M0 = soft_assign(Un, basis.values(theta0), tau, T_out, centroid, params.sinkhorn,
                                 params.outlier_weight)
                return RpmResult(_world(basis.to_tps(theta0, 1e-6), center, scale), M0,
                                 energies + [e], aborted=True)
        else:
            rising = 0
        energies.append(e)
    if M is None:
        M = soft_assign(Un, fv, schedule.T_final, T_out, centroid, params.sinkhorn, params.outlier_weight)
    return RpmResult(_world(basis.to_tps(theta, lam), center, scale), M, energies)


def _world(f: Tps, center, scale) -> Tps:
    return Tps(f.affine, f.warp, f.control, f.lam, np.asarray(center, dtype=np.float64), float(scale))


def harden(M, threshold: float = 0.5):
    """(i, j) pairs from row-argmax of M; ambiguous or outlier rows are dropped."""
    j = M.argmax(axis=1)
    top = M[np.arange(len(M)), j]
    ok = (j < M.shape[1] - 1) & (top >= threshold)
    i = np.nonzero(ok)[0]
    return np.stack([i, j[ok]], axis=1)


# ---------------------------------------------------------------------------
# temporal TPS


@dataclass
class Ttps:
    splines: list  # f^t, t = 0..T-1, seq2 -> seq1
    pairs: np.ndarray  # (P, 2) index pairs into the extraction-frame point sets
    tau: int  # extraction frame of the winning candidate
    energy: float
    candidate_energies: list
    reverse: list | None = None  # seq1 -> seq2 splines fitted to the swapped pairs

    @property
    def T(self):
        return len(self.splines)

    def forward(self, t, pts):
        return self.splines[t](pts)

    def backward(self, t, pts):
        if self.reverse is None:
            raise ValueError("no reverse splines")
        return self.reverse[t](pts)

    def to_json(self):
        return {"type": "ttps", "splines": [s.to_json() for s in self.splines],
                "reverse": [s.to_json() for s in self.reverse] if self.reverse else None,
                "pairs": self.pairs.tolist(), "tau": self.tau, "energy": self.energy,
                "candidate_energies": self.candidate_energies}

    @classmethod
    def from_json(cls, o):
        rev = [Tps.from_json(s) for s in o["reverse"]] if o.get("reverse") else None
        return cls([Tps.from_json(s) for s in o["splines"]], np.asarray(o["pairs"], dtype=np.int64).reshape(-1, 2),
                   int(o["tau"]), float(o["energy"]), list(o["candidate_energies"]), rev)


@dataclass
class _Candidate:
    splines: list
    pairs: np.ndarray
    energy: float
    tau: int


def _fit_frames(Ut, Vt, pairs, lam, params, center, scale):
    """One spline per frame through the fixed correspondences."""
    T = len(Ut)
    out = []
    for t in range(T):
        src, dst = Vt[t][pairs[:, 1]], Ut[t][pairs[:, 0]]
        ctrl = _control_subset(src, params.max_control)
        out.append(tps_fit(src, dst, lam=lam, control=ctrl, center=center, scale=scale))
    return out


def ttps_energy(splines, Ut, Vt, pairs, n_u, params, scale):
    """Matched residuals plus smoothness per frame, plus a fixed cost per unmatched point.

    Distances are in normalized units and the total is divided by the
    number of target points so candidates of different sizes compare.
    """
    zeta = params.outlier_cost ** 2
    tot = 0.0
    for t, f in enumerate(splines):
        r = (f(Vt[t][pairs[:, 1]]) - Ut[t][pairs[:, 0]]) / scale
        tot += float((r ** 2).sum()) + f.lam * f.bending() + zeta * (n_u - len(pairs))
    return tot / max(n_u * len(splines), 1)


def ttps_candidate(edges_u: EdgePointSet, edges_v: EdgePointSet, tau: int, init: Homography,
                   params: RpmParams = RpmParams()):
    Ut, Vt = edges_u.tracks[tau], edges_v.tracks[tau]
    if Ut.shape[1] < 3 or Vt.shape[1] < 3:
        raise FitError(f"too few edge points at frame {tau}")
    center, scale = _normalization(Ut[tau])
    rpm = tps_rpm(Ut[tau], Vt[tau], init, params, frame=(center, scale))
    pairs = harden(rpm.M, params.harden)
    if len(pairs) < 3:
        raise FitError("too few hard correspondences")
    lam = rpm.tps.lam
    splines = _fit_frames(Ut, Vt, pairs, lam, params, center, scale)
    e = ttps_energy(splines, Ut, Vt, pairs, Ut.shape[1], params, scale)
    return _Candidate(splines, pairs, e, tau)


def ttps_align(edges_u: EdgePointSet, edges_v: EdgePointSet, init: Homography,
               params: RpmParams = RpmParams(), with_reverse: bool = True) -> Ttps:
    """Try every extraction frame as the anchor and keep the lowest-energy TTPS."""
    cands, energies = [], []
    for tau in range(edges_u.T):
        try:
            c = ttps_candidate(edges_u, edges_v, tau, init, params)
        except (FitError, EmptyEdges, np.linalg.LinAlgError):
            energies.append(None)
            continue
        cands.append(c)
        energies.append(c.energy)
    if not cands:
        raise FitError("every TTPS candidate failed")
    best = min(cands, key=lambda c: (c.energy, c.tau))
    rev = None
    if with_reverse:
        Ut, Vt = edges_u.tracks[best.tau], edges_v.tracks[best.tau]
        sw = best.pairs[:, ::-1]
        center, scale = _normalization(Vt[best.tau])
        rev = _fit_frames(Vt, Ut, sw, best.splines[0].lam, params, center, scale)
    return Ttps(best.splines, best.pairs, best.tau, best.energy, energies, rev)


def overlay(mask_u, mask_v, forward) -> np.ndarray:
    """Gray image of the seq1 mask (96) and the mapped seq2 mask (160); overlap is 255."""
    h, w = mask_u.shape
    img = np.where(mask_u, 96, 0).astype(np.uint8)
    yx = np.argwhere(mask_v)
    if len(yx):
        p = forward(yx[:, ::-1].astype(np.float64))
        ok = np.all(np.isfinite(p), axis=1)
        q = np.rint(p[ok]).astype(np.int64)
        ok2 = (q[:, 0] >= 0) & (q[:, 0] < w) & (q[:, 1] >= 0) & (q[:, 1] < h)
        x, y = q[ok2, 0], q[ok2, 1]
        img[y, x] = np.where(mask_u[y, x], 255, 160)
    return img

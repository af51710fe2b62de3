"""Synthetic articulated-walker shot generator with full ground truth.

The figure is a side-view quadruped made of four rigid bodies: a torso
capsule, a front leg, a back leg and a head (neck + skull). Every pixel is
owned by one body (z-order inside the figure, nearest body in a thin band
around it) and its flow is the exact motion of that body between frames, so
the flow field is piecewise affine. Trajectories follow material points and
stop whenever their bilinear stencil is not owned by their own body, which
keeps them exactly consistent with the stored flow.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .datamodel import LandmarkSet, Shot, Trajectory, save_shot_bundle

BEHAVIORS = ("walk", "head_turn", "sit", "pause")
BODIES = ("torso", "back_leg", "front_leg", "head")  # z-order, lowest first


class SynthConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WalkerConfig:
    width: int = 96
    height: int = 72
    speed: float = 0.5  # torso px/frame while walking
    period: float = 8.0  # leg swing period, frames
    amplitude: float = 0.45  # leg swing amplitude, radians
    hind_ratio: float = 0.7  # back-leg swing relative to the front leg
    script: tuple = (("walk", 40),)
    scale: float = 1.0
    seed: int = 0
    phase: float = 0.0  # gait phase at the first walking frame, radians
    head_amplitude: float = 0.7  # head_turn rotation, radians (sign = direction)
    sit_pitch: float = 0.3
    sit_fold: float = 1.2
    leg_factor: float = 1.0
    torso_factor: float = 1.0
    head_factor: float = 1.0
    origin: tuple | None = None  # torso center at frame 0; default: left-center
    traj_step: float = 3.0  # material point spacing, px
    band: float = 4.0  # ownership band outside the figure, px
    clutter: int = 0  # number of static background edge segments
    shot_id: str | None = None
    class_label: str = "walker"

    def __post_init__(self):
        if self.period < 5:
            raise SynthConfigError("leg period must be >= 5 frames")
        for name, dur in self.script:
            if name not in BEHAVIORS:
                raise SynthConfigError(f"unknown behavior {name!r}")
            if dur < 2:
                raise SynthConfigError(f"behavior {name} lasts {dur} < 2 frames")
            if name == "pause" and dur < 3:
                raise SynthConfigError("pauses last at least 3 frames")

    @property
    def n_frames(self):
        return int(sum(d for _, d in self.script))


# ---------------------------------------------------------------------------
# geometry


def _rot(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s], [s, c]])


def _compose(A, B):
    """(R, t) composition: A after B."""
    return (A[0] @ B[0], A[0] @ B[1] + A[1])


class _Figure:
    """Body dimensions and local-frame shapes for one instance."""

    def __init__(self, cfg: WalkerConfig):
        s = cfg.scale
        self.half = 11.0 * s * cfg.torso_factor
        self.r_torso = 4.2 * s
        self.leg_len = 12.0 * s * cfg.leg_factor
        self.r_leg = 1.7 * s
        self.neck_len = 5.0 * s
        self.r_neck = 2.0 * s
        self.r_head = 3.8 * s * cfg.head_factor
        self.back_pivot = np.array([-0.72 * self.half, 0.45 * self.r_torso])
        self.front_pivot = np.array([0.72 * self.half, 0.45 * self.r_torso])
        self.neck_base = np.array([0.9 * self.half, -0.35 * self.r_torso])
        d = np.array([0.55, -0.835])
        self.neck_dir = d / np.linalg.norm(d)
        self.head_center_local = self.neck_dir * (self.neck_len + 0.6 * self.r_head)
        # capsules per body in local coordinates: (p0, p1, radius)
        self.shapes = {
            "torso": [(np.array([-self.half, 0.0]), np.array([self.half, 0.0]), self.r_torso)],
            "back_leg": [(np.zeros(2), np.array([0.0, self.leg_len]), self.r_leg)],
            "front_leg": [(np.zeros(2), np.array([0.0, self.leg_len]), self.r_leg)],
            "head": [(np.zeros(2), self.neck_dir * self.neck_len, self.r_neck),
                     (self.head_center_local, self.head_center_local, self.r_head)],
        }

    def transforms(self, pose):
        """World transform (R, t) of each body for a pose dict."""
        torso = (_rot(pose["pitch"]), np.array([pose["cx"], pose["cy"]]))
        out = {"torso": torso}
        out["back_leg"] = _compose(torso, (_rot(-pose["back"]), self.back_pivot))
        out["front_leg"] = _compose(torso, (_rot(-pose["front"]), self.front_pivot))
        out["head"] = _compose(torso, (_rot(-pose["head"]), self.neck_base))
        return out

    def landmarks_local(self):
        """Landmark -> (body, local point). Only right-side limbs are modelled."""
        fwd = self.neck_dir
        hc = self.head_center_local
        r = self.r_head
        L = self.leg_len
        lm = {
            "right_eye": ("head", hc + 0.45 * r * np.array([1.0, 0.0]) - 0.25 * r * np.array([0.0, 1.0])),
            "left_eye": ("head", hc + 0.05 * r * np.array([1.0, 0.0]) - 0.45 * r * np.array([0.0, 1.0])),
            "chin": ("head", hc + 0.55 * r * np.array([1.0, 0.0]) + 0.6 * r * np.array([0.0, 1.0])),
            "neck": ("head", fwd * 0.5 * self.neck_len),
            "right_shoulder": ("torso", self.front_pivot + np.array([0.0, -0.5 * self.r_torso])),
            "tail_base": ("torso", np.array([-self.half - 0.3 * self.r_torso, -0.3 * self.r_torso])),
        }
        for leg, body in (("front_right", "front_leg"), ("back_right", "back_leg")):
            lm[f"{leg}_knee"] = (body, np.array([0.0, 0.45 * L]))
            lm[f"{leg}_ankle"] = (body, np.array([0.0, 0.85 * L]))
            lm[f"{leg}_foot"] = (body, np.array([0.0, L]))
        return lm


def _segment_distance(px, p0, p1):
    d = p1 - p0
    dd = float(d @ d)
    if dd == 0.0:
        return np.linalg.norm(px - p0, axis=-1)
    u = np.clip(((px - p0) @ d) / dd, 0.0, 1.0)
    return np.linalg.norm(px - (p0 + u[..., None] * d), axis=-1)


def _body_sdf(fig, body, T, pts):
    R, t = T
    local = (pts - t) @ R  # R^T (p - t)
    return np.min([_segment_distance(local, p0, p1) - r for p0, p1, r in fig.shapes[body]], axis=0)


# ---------------------------------------------------------------------------
# behavior script -> poses


def _smoothstep(x):
    return x * x * (3 - 2 * x)


def script_poses(cfg: WalkerConfig, fig: _Figure, origin):
    """Poses for frames 0..N (one past the end, so every frame has flow)."""
    pose = {"cx": float(origin[0]), "cy": float(origin[1]), "pitch": 0.0,
            "back": 0.0, "front": 0.0, "head": 0.0}
    poses = []
    labels = []
    omega = 2 * np.pi / cfg.period
    for name, dur in cfg.script:
        p0 = dict(pose)
        for tau in range(dur):
            labels.append(name)
            poses.append(_advance(cfg, fig, name, p0, tau, dur, omega))
        pose = _advance(cfg, fig, name, p0, dur, dur, omega)
    poses.append(pose)
    return poses, labels


def _advance(cfg, fig, name, p0, tau, dur, omega):
    p = dict(p0)
    if name == "walk":
        ph = cfg.phase
        p["cx"] = p0["cx"] + cfg.speed * tau
        p["front"] = p0["front"] + cfg.amplitude * (np.sin(omega * tau + ph) - np.sin(ph))
        a = cfg.amplitude * cfg.hind_ratio
        p["back"] = p0["back"] + a * (np.sin(omega * tau + ph + np.pi) - np.sin(ph + np.pi))
    elif name == "head_turn":
        p["head"] = p0["head"] + cfg.head_amplitude * 0.5 * (1 - np.cos(2 * np.pi * tau / dur))
    elif name == "sit":
        u = _smoothstep(tau / dur)
        p["pitch"] = p0["pitch"] - cfg.sit_pitch * u
        p["back"] = p0["back"] - cfg.sit_fold * u
        # rotate the torso about the front hip so the front leg stays planted
        R0, R1 = _rot(p0["pitch"]), _rot(p["pitch"])
        hip = np.array([p0["cx"], p0["cy"]]) + R0 @ fig.front_pivot
        c = hip - R1 @ fig.front_pivot
        p["cx"], p["cy"] = float(c[0]), float(c[1])
    return p


# ---------------------------------------------------------------------------
# rendering


def _render(cfg, fig, poses):
    h, w = cfg.height, cfg.width
    ys, xs = np.mgrid[0:h, 0:w]
    pix = np.stack([xs, ys], axis=-1).reshape(-1, 2).astype(np.float64)
    n = len(poses) - 1
    masks = np.zeros((n, h, w), bool)
    owners = np.full((n, h, w), -1, np.int8)
    flows = np.zeros((n, h, w, 2), np.float32)
    transforms = [fig.transforms(p) for p in poses]
    for k in range(n):
        T0, T1 = transforms[k], transforms[k + 1]
        sdf = np.stack([_body_sdf(fig, b, T0[b], pix) for b in BODIES])  # (B, P)
        inside = sdf <= 0
        mask = inside.any(axis=0)
        # topmost body containing the pixel; nearest body in the band
        top = len(BODIES) - 1 - np.argmax(inside[::-1], axis=0)
        nearest = np.argmin(sdf, axis=0)
        owner = np.where(mask, top, np.where(sdf.min(axis=0) <= cfg.band, nearest, -1))
        fl = np.zeros_like(pix)
        for bi, b in enumerate(BODIES):
            sel = owner == bi
            if not sel.any():
                continue
            R0, t0 = T0[b]
            R1, t1 = T1[b]
            local = (pix[sel] - t0) @ R0
            fl[sel] = local @ R1.T + t1 - pix[sel]
        masks[k] = mask.reshape(h, w)
        owners[k] = owner.reshape(h, w)
        flows[k] = fl.reshape(h, w, 2)
    return masks, owners, flows, transforms


def _edges(mask, clutter_img):
    er = ndimage.binary_erosion(mask, structure=np.ones((3, 3), bool), border_value=0)
    e = (mask & ~er).astype(np.float32)
    if clutter_img is not None:
        far = ndimage.distance_transform_edt(~mask) > 8
        e = np.maximum(e, np.where(far, clutter_img, 0).astype(np.float32))
    return e


def _clutter(cfg, rng):
    if cfg.clutter <= 0:
        return None
    img = np.zeros((cfg.height, cfg.width), np.float32)
    for _ in range(cfg.clutter):
        p0 = rng.uniform([0, 0], [cfg.width - 1, cfg.height - 1])
        ang = rng.uniform(0, np.pi)
        ln = rng.uniform(8, 20)
        strength = rng.uniform(0.6, 0.95)
        for s in np.linspace(0, ln, int(ln * 2)):
            x, y = p0 + s * np.array([np.cos(ang), np.sin(ang)])
            if 0 <= x < cfg.width and 0 <= y < cfg.height:
                img[int(y), int(x)] = strength
    return img


def _material_points(fig, step):
    """Local-frame sample points for every body."""
    out = []
    for bi, b in enumerate(BODIES):
        pts = []
        for p0, p1, r in fig.shapes[b]:
            lo = np.minimum(p0, p1) - r
            hi = np.maximum(p0, p1) + r
            gx = np.arange(lo[0] + step / 2, hi[0], step)
            gy = np.arange(lo[1] + step / 2, hi[1], step)
            g = np.stack(np.meshgrid(gx, gy), -1).reshape(-1, 2)
            inside = _segment_distance(g, p0, p1) - r <= -0.5
            pts.append(g[inside])
        pts = np.concatenate(pts) if pts else np.zeros((0, 2))
        if len(pts):
            pts = np.unique(np.round(pts, 6), axis=0)
        out.extend((bi, p) for p in pts)
    return out


def _stencil_owned(owner_grid, xy, bi):
    h, w = owner_grid.shape
    x, y = xy
    if not (0 <= x <= w - 1 and 0 <= y <= h - 1):
        return False
    x0, y0 = min(int(np.floor(x)), w - 2), min(int(np.floor(y)), h - 2)
    return bool((owner_grid[y0:y0 + 2, x0:x0 + 2] == bi).all())


def _trajectories(cfg, fig, owners, transforms):
    n = owners.shape[0]
    trajs = []
    for bi, local in _material_points(fig, cfg.traj_step):
        b = BODIES[bi]
        world = np.array([transforms[k][b][0] @ local + transforms[k][b][1] for k in range(n)])
        valid = np.array([_stencil_owned(owners[k], world[k], bi) for k in range(n)])
        k = 0
        while k < n:
            if not valid[k]:
                k += 1
                continue
            j = k
            while j + 1 < n and valid[j + 1]:
                j += 1
            # the step out of frame j is consistent with flow, so frame j+1's
            # point may be appended when it is at least visible on its body
            end = j
            if j + 1 < n:
                x, y = world[j + 1]
                if (0 <= x <= cfg.width - 1 and 0 <= y <= cfg.height - 1
                        and owners[j + 1][int(round(y)), int(round(x))] == bi):
                    end = j + 1
            if end > k:
                trajs.append((k, world[k:end + 1], b))
            k = j + 1 if end == j else j + 2
    trajs.sort(key=lambda t: (t[0], t[2], t[1][0][1], t[1][0][0]))
    return [Trajectory(i, s, pts, label) for i, (s, pts, label) in enumerate(trajs)]


def _landmarks(cfg, fig, owners, transforms):
    lm_local = fig.landmarks_local()
    n = owners.shape[0]
    out = []
    for k in range(n):
        entries = {}
        for name, (body, p) in lm_local.items():
            R, t = transforms[k][body]
            xy = R @ p + t
            x, y = xy
            vis = 0 <= x <= cfg.width - 1 and 0 <= y <= cfg.height - 1
            entries[name] = (xy, bool(vis))
        out.append(LandmarkSet(entries))
    return out


@dataclass
class SynthShot:
    """Generated shot plus generator-side ground truth not stored in bundles."""

    shot: Shot
    config: WalkerConfig
    owners: np.ndarray  # (N, H, W) body index per pixel, -1 background
    transforms: list = field(repr=False)
    figure: _Figure = field(repr=False)

    def body_motion(self, body, k0, k1, pts):
        """Map world points on ``body`` at frame k0 to frame k1 by kinematics."""
        R0, t0 = self.transforms[k0][body]
        R1, t1 = self.transforms[k1][body]
        return ((np.asarray(pts) - t0) @ R0) @ R1.T + t1

    def owner_at(self, k, xy):
        """Body name owning the pixel nearest ``xy`` at frame k, or None."""
        x, y = int(round(xy[0])), int(round(xy[1]))
        h, w = self.owners.shape[1:]
        if not (0 <= x < w and 0 <= y < h) or self.owners[k, y, x] < 0:
            return None
        return BODIES[self.owners[k, y, x]]

    def interior(self, k, xy, body):
        """True when the bilinear stencil around ``xy`` lies wholly on ``body``."""
        x, y = xy
        h, w = self.owners.shape[1:]
        if not (0 <= x <= w - 1 and 0 <= y <= h - 1):
            return False
        return _stencil_owned(self.owners[k], xy, BODIES.index(body))


def _default_origin(cfg):
    walk = sum(d for b, d in cfg.script if b == "walk")
    return (0.5 * cfg.width - 0.5 * cfg.speed * walk, 0.45 * cfg.height)


def generate(cfg: WalkerConfig) -> SynthShot:
    fig = _Figure(cfg)
    origin = cfg.origin if cfg.origin is not None else _default_origin(cfg)
    poses, labels = script_poses(cfg, fig, origin)
    masks, owners, flows, transforms = _render(cfg, fig, poses)
    n = len(labels)
    # the figure must stay inside the grid with a one-pixel margin
    for k in range(n):
        m = masks[k]
        if m[0].any() or m[-1].any() or m[:, 0].any() or m[:, -1].any():
            raise SynthConfigError(f"figure leaves the grid at frame {k}")
        if not m.any():
            raise SynthConfigError(f"empty figure at frame {k}")
    rng = np.random.default_rng([cfg.seed, 7])
    clutter = _clutter(cfg, rng)
    edges = np.stack([_edges(masks[k], clutter) for k in range(n)])
    trajs = _trajectories(cfg, fig, owners, transforms)
    lms = _landmarks(cfg, fig, owners, transforms)
    shot = Shot(cfg.shot_id or f"walker_{cfg.seed:05d}", cfg.class_label, masks, flows, edges,
                trajs, lms, labels, keep_largest_component=False)
    return SynthShot(shot, cfg, owners, transforms[: n + 1], fig)


def generate_shot(cfg: WalkerConfig) -> Shot:
    return generate(cfg).shot


# ---------------------------------------------------------------------------
# corpus


DEFAULT_DURATIONS = {"walk": (28, 40), "head_turn": (14, 22), "sit": (12, 18)}


def random_config(rng, behaviors=("walk", "head_turn", "sit"), shot_id=None, seed=0,
                  n_segments=None, width=96, height=72, **overrides) -> WalkerConfig:
    """Draw a varied single-instance config with pauses between behaviors."""
    k = int(n_segments) if n_segments is not None else int(rng.integers(1, 3))
    chosen = list(rng.choice(list(behaviors), size=k, replace=False))
    if "sit" in chosen:  # sitting is terminal
        chosen.remove("sit")
        chosen.append("sit")
    script = []
    for i, b in enumerate(chosen):
        lo, hi = DEFAULT_DURATIONS.get(b, (14, 22))
        script.append((b, int(rng.integers(lo, hi + 1))))
        if i + 1 < len(chosen):
            script.append(("pause", int(rng.integers(4, 7))))
    scale = float(rng.uniform(0.85, 1.2))
    speed = float(rng.uniform(0.3, 0.5))
    walk_frames = sum(d for b, d in script if b == "walk")
    x0 = 0.5 * width - 0.5 * speed * walk_frames
    params = dict(
        width=width, height=height, script=tuple(script), scale=scale, speed=speed,
        period=float(rng.integers(7, 10)), amplitude=float(rng.uniform(0.4, 0.55)),
        phase=float(rng.uniform(0, 2 * np.pi)),
        head_amplitude=float(rng.uniform(0.55, 0.8)),  # mirrored turns would be another motion
        leg_factor=float(rng.uniform(0.9, 1.1)), torso_factor=float(rng.uniform(0.9, 1.1)),
        head_factor=float(rng.uniform(0.9, 1.1)),
        origin=(float(x0), float(rng.uniform(0.4, 0.5) * height)),
        seed=int(seed), shot_id=shot_id,
    )
    params.update(overrides)
    return WalkerConfig(**params)


def generate_dataset(n_shots, behaviors=("walk", "head_turn", "sit"), seed=0, out_dir=None,
                     corrupt_fraction=0.0, corrupt_mode="erode", **overrides):
    """Generate ``n_shots`` varied shots; optionally write bundles + corpus manifest.

    ``corrupt_fraction`` of the shots get damaged masks ("erode": one-pixel
    erosion of every mask, "delete": masks removed in a third of the frames).
    """
    shots = []
    rng = np.random.default_rng(seed)
    n_corrupt = int(round(corrupt_fraction * n_shots))
    corrupt = set(rng.choice(n_shots, size=n_corrupt, replace=False).tolist()) if n_corrupt else set()
    for i in range(n_shots):
        srng = np.random.default_rng([seed, i])
        cfg = random_config(srng, behaviors, shot_id=f"shot_{i:04d}", seed=seed * 100003 + i,
                            **overrides)
        shot = generate_shot(cfg)
        if i in corrupt:
            shot = corrupt_masks(shot, corrupt_mode, srng)
        shots.append(shot)
    if out_dir is not None:
        write_corpus(shots, out_dir)
    return shots


def corrupt_masks(shot: Shot, mode, rng) -> Shot:
    masks = np.array(shot.masks)
    if mode == "erode":
        masks = np.stack([ndimage.binary_erosion(m, border_value=0) for m in masks])
    elif mode == "delete":
        drop = rng.choice(shot.n_frames, size=max(1, shot.n_frames // 3), replace=False)
        masks[drop] = False
    else:
        raise ValueError(f"unknown corruption mode {mode!r}")
    return Shot(shot.shot_id, shot.class_label, masks, shot.flow, shot.edges, shot.trajectories,
                shot.landmarks, shot.labels, keep_largest_component=False)


CORPUS_MANIFEST = "corpus.json"


def write_corpus(shots, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for shot in shots:
        save_shot_bundle(shot, out_dir / shot.shot_id)
        entries.append({"shot_id": shot.shot_id, "path": shot.shot_id,
                        "n_frames": shot.n_frames, "labels": list(shot.labels or [])})
    (out_dir / CORPUS_MANIFEST).write_text(
        json.dumps({"version": 1, "shots": entries}, sort_keys=True, separators=(",", ":")))
    return out_dir


def read_corpus(corpus_dir):
    from .datamodel import load_shot_bundle

    corpus_dir = Path(corpus_dir)
    man = json.loads((corpus_dir / CORPUS_MANIFEST).read_text())
    return [load_shot_bundle(corpus_dir / e["path"]) for e in man["shots"]]


def with_script(cfg: WalkerConfig, script) -> WalkerConfig:
    return replace(cfg, script=tuple(script))


# ---------------------------------------------------------------------------
# planted warps


@dataclass(frozen=True)
class PlantedWarp:
    """Smooth time-varying warp: per-frame affine about ``center`` plus a sinusoid.

    W_t(p) = c + A_t (p - c) + b_t + amp * (sin(2 pi (y - c_y) / wavelength + phi_t),
                                             sin(2 pi (x - c_x) / wavelength + phi_t))
    """

    center: tuple
    A: tuple  # per-frame 2x2 matrices
    b: tuple  # per-frame translations
    amp: float = 1.5
    wavelength: float = 40.0
    phase_rate: float = 0.2

    @classmethod
    def random(cls, rng, n_frames, center, scale=(0.9, 1.15), amp=1.5, wavelength=40.0):
        s = rng.uniform(*scale)
        rot, shear = rng.uniform(-0.08, 0.08), rng.uniform(-0.05, 0.05)
        A0 = s * np.array([[np.cos(rot), -np.sin(rot)], [np.sin(rot), np.cos(rot)]]) @ np.array([[1, shear], [0, 1]])
        b0 = rng.uniform(-3, 3, 2)
        drift = rng.uniform(-0.01, 0.01)
        A = tuple((A0 * (1 + drift * k)).tolist() for k in range(n_frames + 1))
        b = tuple((b0 + 0.05 * k * rng.uniform(-1, 1, 2)).tolist() for k in range(n_frames + 1))
        return cls(tuple(center), A, b, amp, wavelength)

    def __call__(self, t, pts):
        P = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        c = np.asarray(self.center)
        d = P - c
        ph = self.phase_rate * t
        k = 2 * np.pi / self.wavelength
        wig = self.amp * np.stack([np.sin(k * d[:, 1] + ph), np.sin(k * d[:, 0] + ph)], axis=1)
        return c + d @ np.asarray(self.A[t]).T + np.asarray(self.b[t]) + wig

    def inverse(self, t, pts, iters=60):
        """Fixed-point inverse; converges for small sinusoid amplitudes."""
        P = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        c = np.asarray(self.center)
        Ai = np.linalg.inv(np.asarray(self.A[t]))
        Q = c + (P - c - np.asarray(self.b[t])) @ Ai.T
        for _ in range(iters):
            Q = Q - (self(t, Q) - P) @ Ai.T
        return Q


def warp_shot(shot: Shot, warp: PlantedWarp, shot_id=None) -> Shot:
    """Render ``shot`` through a planted warp, carrying flow, tracks and landmarks."""
    from .kernels import bilinear_sample

    n, h, w = shot.n_frames, shot.height, shot.width
    ys, xs = np.mgrid[0:h, 0:w]
    pix = np.stack([xs, ys], axis=-1).reshape(-1, 2).astype(np.float64)
    masks = np.zeros((n, h, w), bool)
    flows = np.zeros((shot.flow.shape[0], h, w, 2), np.float32)
    for k in range(n):
        src = warp.inverse(k, pix)
        r, c = np.round(src[:, 1]).astype(int), np.round(src[:, 0]).astype(int)
        ok = (r >= 0) & (r < h) & (c >= 0) & (c < w)
        m = np.zeros(len(pix), bool)
        m[ok] = shot.masks[k][r[ok], c[ok]]
        masks[k] = m.reshape(h, w)
        if shot.has_flow(k):
            nxt = warp(k + 1, src + bilinear_sample(shot.flow[k], src))
            flows[k] = (nxt - pix).reshape(h, w, 2)
    edges = np.stack([_edges(masks[k], None) for k in range(n)])
    trajs = [Trajectory(t.traj_id, t.start_frame,
                        np.concatenate([warp(t.start_frame + i, p[None]) for i, p in enumerate(t.points)]),
                        t.label) for t in shot.trajectories]
    lms = None
    if shot.landmarks is not None:
        lms = []
        for k, ls in enumerate(shot.landmarks):
            ent = {}
            for name, (xy, vis) in ls.entries.items():
                q = warp(k, np.array(xy))[0]
                ent[name] = (q, vis and 0 <= q[0] <= w - 1 and 0 <= q[1] <= h - 1)
            lms.append(LandmarkSet(ent))
    return Shot(shot_id or shot.shot_id + "_warped", shot.class_label, masks, flows, edges, trajs,
                lms, shot.labels, keep_largest_component=False)

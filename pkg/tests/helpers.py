"""Synthetic fixtures shared by unit and acceptance tests."""

import numpy as np

# PASS/FAIL lines from the acceptance criteria, echoed in the terminal summary
ACCEPTANCE = []


def noise_counts(rng, L=80, V=60, lam=2.0):
    """White-noise per-frame codeword counts."""
    return rng.poisson(lam, (L, V)).astype(float)


def planted_counts(rng, period, start, length, L=80, V=60, lam=2.0):
    """Noise counts with a periodic stretch [start, start+length).

    Half of the codewords follow a cosine rate with their own phase.
    """
    X = noise_counts(rng, L, V, lam)
    t = np.arange(length)[:, None]
    phase = rng.uniform(0, 2 * np.pi, V)[None]
    active = (rng.random(V) < 0.5)[None]
    rate = lam * (1 + active * np.cos(2 * np.pi * t / period + phase))
    X[start:start + length] = rng.poisson(rate)
    return X


def window_iou(a, b):
    """IoU of two inclusive frame ranges."""
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]) + 1)
    union = max(a[1], b[1]) - min(a[0], b[0]) + 1
    return inter / union


# ---------------------------------------------------------------------------
# alignment scenarios


PLANTED_H = np.array([[1.1, 0.05, 3.0], [-0.04, 0.95, -2.0], [1e-4, -2e-4, 1.0]])
SQUARE = np.array([[0, 0], [100, 0], [100, 100], [0, 100]], dtype=float)


def planted_matches(rng, H, n=40, T=10, outlier_frac=0.3, noise=0.5):
    """Trajectory matches under homography H with a share of corrupted ones."""
    from potalign.homography import Homography, Track, TrajectoryMatch

    Hh = Homography.from_matrix(H)
    out = []
    n_bad = int(round(outlier_frac * n))
    for i in range(n):
        start = rng.uniform(0, 100, 2)
        pv = np.vstack([start, start + np.cumsum(rng.normal(0, 1.5, (T - 1, 2)), 0)])
        pu = Hh.apply(pv) + rng.normal(0, noise, pv.shape)
        if i < n_bad:
            pu = pu + rng.uniform(-30, 30, 2) + rng.normal(0, 5, pv.shape)
        out.append(TrajectoryMatch(Track(i, 0, pu, np.zeros(2)), Track(i, 0, pv, np.zeros(2)), 0.0))
    return out


def warped_cmp(seed, T=10):
    """A walker shot and its image under a planted time-varying warp."""
    from potalign import synth

    r = np.random.default_rng(seed)
    s1 = synth.generate_shot(synth.WalkerConfig(script=(("walk", 24),), seed=seed,
                                                phase=float(r.uniform(0, 6))))
    warp = synth.PlantedWarp.random(r, s1.n_frames, (48, 32))
    s2 = synth.warp_shot(s1, warp)
    a = int(r.integers(0, s1.n_frames - T + 1))
    return s1, a, s2, a


def walker_pair_cmp(seed, T=10, jitter=1):
    """Two different walker instances, started at nearly the same gait phase."""
    from potalign import synth

    r = np.random.default_rng(seed)
    c1 = synth.random_config(r, behaviors=("walk",), n_segments=1, seed=2 * seed)
    c2 = synth.random_config(r, behaviors=("walk",), n_segments=1, seed=2 * seed + 1, period=c1.period)
    s1, s2 = synth.generate_shot(c1), synth.generate_shot(c2)
    a = int(r.integers(0, s1.n_frames - T + 1))
    w = 2 * np.pi / c1.period
    bs = np.arange(0, s2.n_frames - T + 1)
    dp = np.abs(np.angle(np.exp(1j * ((c2.phase + w * bs) - (c1.phase + w * a)))))
    b = int(bs[np.argmin(dp + 1e-3 * bs)]) + int(r.integers(-jitter, jitter + 1))
    return s1, a, s2, int(np.clip(b, 0, s2.n_frames - T))


def head_only_case(seed, T=10):
    """Walker pair where the first sequence only keeps head trajectories."""
    from potalign import synth
    from potalign.homography import sequence_tracks

    r = np.random.default_rng(seed)
    c1 = synth.WalkerConfig(script=(("walk", 30),), seed=seed, phase=float(r.uniform(0, 6)))
    c2 = synth.WalkerConfig(script=(("walk", 30),), seed=seed + 1, scale=float(r.uniform(0.8, 1.3)),
                            phase=c1.phase, speed=0.4,
                            origin=(30 + r.uniform(-5, 5), 30 + r.uniform(-4, 4)))
    s1, s2 = synth.generate_shot(c1), synth.generate_shot(c2)
    a = int(r.integers(0, 20))
    tu = [t for t in sequence_tracks(s1, a, T) if t.label == "head"]
    tv = sequence_tracks(s2, a, T)
    return s1, a, s2, a, tu, tv


def mapping_error(forward, backward, s1, a, s2, b, T=10):
    from potalign.evaluate import alignment_error

    return alignment_error(forward, backward, s1.landmarks[a:a + T], s2.landmarks[b:b + T])


def homography_error(H, s1, a, s2, b, T=10):
    Hi = H.inverse()
    return mapping_error(lambda t, p: H.apply(p), lambda t, p: Hi.apply(p), s1, a, s2, b, T)


# ---------------------------------------------------------------------------
# point sets and selection instances


def sine_warp(P):
    return P + np.stack([2 * np.sin(P[:, 1] / 10), 1.5 * np.cos(P[:, 0] / 12)], 1)


def planted_rpm_case(seed, n=120, n_out=12):
    r = np.random.default_rng(seed)
    V = r.uniform(0, 60, (n, 2))
    U = sine_warp(V) + r.normal(0, 0.2, V.shape)
    perm = r.permutation(n)
    Uo = np.vstack([U[perm], r.uniform(0, 60, (n_out, 2))])
    Vo = np.vstack([V, r.uniform(0, 60, (n_out, 2))])
    return Uo, Vo, perm


def random_instance(seed, m=None, n=10, h=12, w=14):
    """Random flow/mask shot with 2..20 random-walk trajectories."""
    from potalign.datamodel import Shot, Trajectory

    rng = np.random.default_rng(seed)
    N = n + 4
    m = int(rng.integers(2, 21)) if m is None else m
    flow = rng.normal(0, 1.5, (N, h, w, 2)).astype(np.float32)
    masks = rng.random((N, h, w)) < 0.7
    masks[:, 0, 0] = True
    shot = Shot("r", "c", masks, flow, np.zeros((N, h, w)), keep_largest_component=False)
    trajs = []
    for i in range(m):
        start = int(rng.integers(0, 4))
        length = int(rng.integers(n - 2, N - start + 1))
        pts = np.cumsum(rng.normal(0, 1, (length, 2)), axis=0) + rng.uniform(0, 10, 2)
        trajs.append(Trajectory(int(rng.permutation(100)[0]) * 100 + i, start, pts))
    return shot, trajs


def selection_matches_oracle(seed):
    """select_pots against the enumeration oracle at every window of one instance."""
    import oracles
    from potalign import pot

    shot, trajs = random_instance(seed)
    vm = pot.median_velocity_track(shot)
    for f in range(shot.n_frames - 10 + 1):
        got = pot.select_pots(shot, trajs, f, 10, theta_f=0.0)
        ref = oracles.select_pots([(t.traj_id, t.start_frame, t.points) for t in trajs],
                                  vm[f:f + 10], f, 10, 0.15)
        if [(int(a), int(s)) for a, s in zip(got.anchor_ids, got.swing_ids)] != [r[:2] for r in ref]:
            return False
        if ref and not np.allclose(got.descriptors, [r[2] for r in ref], atol=1e-12, rtol=0):
            return False
    return True


# ---------------------------------------------------------------------------
# CMP phase recovery


def phase_pair(seed, period=12, shift=4, n=48):
    """Best-CMP start offset between two walkers whose gaits differ by ``shift`` frames."""
    from potalign import cluster, cmp, pot, synth
    from potalign.datamodel import Interval

    w = 2 * np.pi / period
    base = dict(script=(("walk", n),), period=period, seed=seed, speed=0.4)
    a = synth.generate_shot(synth.WalkerConfig(phase=0.0, **base))
    b = synth.generate_shot(synth.WalkerConfig(phase=shift * w, scale=1.1, **base))
    pa, pb = pot.extract_pots(a), pot.extract_pots(b)
    cb = cluster.build_codebook(np.vstack([pa.descriptors, pb.descriptors]), V=60, runs=2, seed=seed)
    fa = cluster.normalize(cluster.frame_counts(pa, cluster.quantize(pa.descriptors, cb), n, 60))
    fb = cluster.normalize(cluster.frame_counts(pb, cluster.quantize(pb.descriptors, cb), n, 60))
    best = cmp.extract_cmps(Interval(a.shot_id, 0, n - 1, "whole_shot"),
                            Interval(b.shot_id, 0, n - 1, "whole_shot"), [fa], [fb])[0]
    return best.seq1.start - best.seq2.start


def phase_error(offset, shift=4, period=12):
    """Distance of a start offset to the planted shift, modulo whole gait cycles."""
    r = (offset - shift) % period
    return min(r, period - r)


# ---------------------------------------------------------------------------
# linkage


def replay_min_members(merges, n):
    """Translate scipy-style merge ids into smallest-member keys."""
    low = list(range(n))
    out = []
    for s, (a, b, h, size) in enumerate(merges):
        ka, kb = sorted((low[int(a)], low[int(b)]))
        low.append(ka)
        out.append((ka, kb, h, int(size)))
    return out

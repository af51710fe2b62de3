"""Acceptance criteria 1-11, each at its stated tolerance and runtime budget.

Every test records one PASS/FAIL line; the lines are repeated in the
terminal summary under "acceptance".
"""

import json
import math
import time

import numpy as np
import pytest

import helpers
import oracles
from potalign import cli, cluster, cmp, evaluate, homography as hg, kernels, partition, pot, synth, ttps
from potalign.config import desk_config
from potalign.datamodel import Interval, Trajectory, load_artifact
from potalign.homography import Homography, RansacParams
from potalign.pipeline import majority_label as majority

pytestmark = pytest.mark.slow


def report(n, checks, t0=None, limit=None):
    if t0 is not None:
        dt = time.perf_counter() - t0
        checks.append((f"runtime {dt:.1f}s < {limit}s", dt < limit))
    ok = all(c for _, c in checks)
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  " + "; ".join(
        name + ("" if c else " [failed]") for name, c in checks)
    helpers.ACCEPTANCE.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# 1. PoT invariances


def test_c01_pot_invariance():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_inv = worst_norm = 0.0
    dims = True
    for n in (3, 5, 10):
        for _ in range(40):
            A, S = rng.normal(0, 5, (n, 2)), rng.normal(0, 5, (n, 2))
            base = pot.pot_descriptor(Trajectory(0, 0, A), Trajectory(1, 0, S), 0, n).as_vector()
            dims &= base.shape == (2 * (n - 1) + 1,)
            worst_norm = max(worst_norm, abs(np.linalg.norm(base[1:].reshape(-1, 2), axis=1).sum() - 1))
            scale = float(rng.uniform(0.05, 20))
            shift = rng.normal(0, 30, 2)
            pan = rng.normal(0, 10, (n, 2)).cumsum(0)  # camera pan: per-frame offset shared by both
            for A2, S2 in [(A * scale, S * scale), (A + shift, S + shift), (A + pan, S + pan)]:
                got = pot.pot_descriptor(Trajectory(0, 0, A2), Trajectory(1, 0, S2), 0, n).as_vector()
                worst_inv = max(worst_inv, np.abs(got - base).max())
    report(1, [(f"invariance max dev {worst_inv:.1e} <= 1e-9", worst_inv <= 1e-9),
               (f"sum |disp| - 1 = {worst_norm:.1e} <= 1e-9", worst_norm <= 1e-9),
               ("dimension 2(n-1)+1 for n in 3, 5, 10", dims)], t0, 1)


# ---------------------------------------------------------------------------
# 2. PoT selection oracle


def test_c02_selection_oracle():
    t0 = time.perf_counter()
    sizes = [len(helpers.random_instance(s)[1]) for s in range(100)]
    ok = sum(helpers.selection_matches_oracle(s) for s in range(100))
    report(2, [(f"{ok}/100 instances equal the enumeration oracle", ok == 100),
               (f"at most {max(sizes)} trajectories", max(sizes) <= 20)], t0, 10)


# ---------------------------------------------------------------------------
# 3. periodicity


def test_c03_periodicity():
    t0 = time.perf_counter()
    checks = []
    for period, length in ((5, 40), (8, 40), (12, 48)):
        ok = 0
        for s in range(100):
            rng = np.random.default_rng(1000 * period + s)
            start = int(rng.integers(0, 80 - length + 1))
            det = partition.detect_periodic_subintervals(helpers.planted_counts(rng, period, start, length))
            if det:
                d = max(det, key=lambda d: d.peak_height * math.sqrt(len(d)))
                ok += abs(d.period - period) <= 1 and \
                    helpers.window_iou(d.window, (start, start + length - 1)) >= 0.8
        checks.append((f"period {period}: {ok}/100 recovered", ok >= 95))
    fp = sum(bool(partition.detect_periodic_subintervals(helpers.noise_counts(np.random.default_rng(50_000 + s)),
                                                         theta_h=0.1)) for s in range(100))
    checks.append((f"white noise false positives {fp}/100", fp <= 5))
    report(3, checks, t0, 30)


# ---------------------------------------------------------------------------
# 4 and 5. partitioning and clustering on the 40-shot corpus


@pytest.fixture(scope="module")
def corpus_stages():
    t0 = time.perf_counter()
    cfg = desk_config()
    shots = synth.generate_dataset(40, seed=0)
    pots = {s.shot_id: pot.extract_pots(s) for s in shots}
    sigma = {s.shot_id: pot.articulation_scores(s).sigma for s in shots}
    X = np.concatenate([p.descriptors for p in pots.values()])
    cb = cluster.build_codebook(X, V=cfg.V, runs=cfg.kmeans_runs, seed=0, sample_cap=cfg.kmeans_sample)
    words = {k: cluster.quantize(p.descriptors, cb) for k, p in pots.items()}
    parts = {s.shot_id: partition.partition(
        s.shot_id, sigma[s.shot_id], cluster.frame_counts(pots[s.shot_id], words[s.shot_id], s.n_frames, cb.V))
        for s in shots}
    return dict(shots={s.shot_id: s for s in shots}, pots=pots, words=words, cb=cb, parts=parts,
                seconds=time.perf_counter() - t0)


def test_c04_partitioning(corpus_stages):
    d = corpus_stages
    u = [evaluate.uniformity(d["shots"][iv.shot_id].labels[iv.start_frame:iv.end_frame + 1])
         for p in d["parts"].values() for iv in p.intervals]
    behaviors = {lab for s in d["shots"].values() for lab in s.labels}
    dt = d["seconds"]
    report(4, [(f"mean uniformity {np.mean(u):.4f} >= 0.95 over {len(u)} intervals", np.mean(u) >= 0.95),
               ("corpus has pauses and 3 behaviors", behaviors == {"walk", "head_turn", "sit", "pause"}),
               (f"runtime {dt:.1f}s < 30s (generation, PoTs, codebook, partition)", dt < 30)])


def test_c05_clustering(corpus_stages):
    t0 = time.perf_counter()
    checks = []
    a = np.array([0.2, 0.3, 0.5, 0.0])
    d_id = cluster.hi_distance(a, a)
    d_dis = cluster.hi_distance(np.array([1.0, 0, 0, 0]), np.array([0, 0, 1.0, 0]))
    checks.append((f"endpoints {d_id!r}, {d_dis!r}", abs(d_id + 1) <= 1e-12 and abs(d_dis + math.exp(-1)) <= 1e-12))
    same = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 13))
        D = rng.random((n, n))
        if seed % 3 == 0:
            D = np.round(D, 1)
        D = (D + D.T) / 2
        np.fill_diagonal(D, 0)
        same += helpers.replay_min_members(kernels.complete_linkage(D), n) == \
            oracles.naive_complete_linkage(D.tolist())
    checks.append((f"merge sequences equal naive oracle {same}/50", same == 50))
    d = corpus_stages
    ivs = [iv for s in sorted(d["parts"]) for iv in d["parts"][s].intervals]
    bows = [cluster.interval_bow(iv, d["pots"][iv.shot_id], d["words"][iv.shot_id], d["cb"].V) for iv in ivs]
    res = cluster.cluster_bows(bows, 3)
    labels = [majority(d["shots"][ivs[i].shot_id].labels, ivs[i]) for i in res.items]
    pur = evaluate.purity(res.assignment, labels)
    checks.append((f"purity {pur:.3f} >= 0.9 at k=3 over {len(labels)} intervals", pur >= 0.9))
    rng = np.random.default_rng(0)
    rand = [evaluate.ari(rng.integers(0, 3, len(labels)), labels) for _ in range(100)]
    checks.append((f"mean random ARI {np.mean(rand):+.4f} within 0.05 of 0", abs(np.mean(rand)) <= 0.05))
    report(5, checks, t0, 120)


# ---------------------------------------------------------------------------
# 6. CMPs


def test_c06_cmp():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    sizes = [(109, 109), (10, 10), (10, 300)] + [tuple(int(x) for x in rng.integers(10, 80, 2)) for _ in range(27)]
    same = 0
    for n, m in sizes:
        P = cluster.normalize(rng.poisson(1.0, (n, 12)).astype(float))
        Q = cluster.normalize(rng.poisson(1.0, (m, 12)).astype(float))
        P[rng.random(n) < 0.1] = 0
        got = cmp.extract_cmps(Interval("p", 0, n - 1, "whole_shot"), Interval("q", 0, m - 1, "whole_shot"),
                               [P], [Q], T=10)
        ref = oracles.top_cmps(P, Q, 10)
        same += [(c.seq1.start, c.seq2.start) for c in got] == [(i, j) for i, j, _ in ref] and \
            np.allclose([c.score for c in got], [s for *_, s in ref], atol=1e-12, rtol=0)
    cands = max((n - 9) * (m - 9) for n, m in sizes)
    phase = [helpers.phase_error(helpers.phase_pair(s)) for s in range(5)]
    report(6, [(f"top-10 equals brute force on {same}/{len(sizes)} pairs (up to {cands} candidates)",
                same == len(sizes) and cands <= 10_000),
               (f"phase shift errors {phase} within 1 frame", max(phase) <= 1)], t0, 60)


# ---------------------------------------------------------------------------
# 7. homography


def test_c07_homography():
    Hp = Homography.from_matrix(helpers.PLANTED_H)
    ok = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        ms = helpers.planted_matches(rng, helpers.PLANTED_H, outlier_frac=0.3, noise=0.5)
        res = hg.ransac_tm(ms, 3.0, RansacParams(fg=False), seed=seed)
        if res.mapping is not None:
            ok += np.linalg.norm(res.mapping.apply(helpers.SQUARE) - Hp.apply(helpers.SQUARE), axis=1).mean() < 1
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        H = np.eye(3) + rng.normal(0, 0.1, (3, 3))
        H[2, :2] *= 0.01
        src = rng.uniform(0, 100, (4, 2))
        got = hg.fit_homography(src, Homography.from_matrix(H).apply(src)).H
        a, b = got / np.linalg.norm(got), H / np.linalg.norm(H)
        worst = max(worst, min(np.abs(a - b).max(), np.abs(a + b).max()))
    wins = 0
    for seed in range(20):
        s1, a, s2, b, tu, tv = helpers.head_only_case(seed)
        errs = [helpers.homography_error(hg.align_homography(s1, a, s2, b, 10, RansacParams(fg=fg), "tm", seed,
                                                             tracks_u=tu, tracks_v=tv).mapping,
                                         s1, a, s2, b).mean_error for fg in (False, True)]
        wins += errs[1] < errs[0]
    report(7, [(f"TM planted: {ok}/100 seeds under 1 px", ok >= 95),
               (f"4-point DLT max dev {worst:.1e} <= 1e-6", worst <= 1e-6),
               (f"FG improves partial coverage in {wins}/20", wins >= 14)])


# ---------------------------------------------------------------------------
# 8. TPS battery


def test_c08_tps():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    worst = 0.0
    for lam in (0.0, 0.1, 1.0, 10.0):
        S = rng.uniform(0, 50, (40, 2))
        A, b = np.eye(2) + rng.normal(0, 0.2, (2, 2)), rng.normal(0, 5, 2)
        f = ttps.tps_fit(S, S @ A.T + b, lam=lam)
        Q = rng.uniform(0, 50, (20, 2))
        worst = max(worst, np.abs(f(Q) - (Q @ A.T + b)).max(), np.abs(f.warp).max())
    rec = []
    for seed in range(20):
        Uo, Vo, perm = helpers.planted_rpm_case(seed)
        am = ttps.tps_rpm(Uo, Vo, Homography.identity()).M.argmax(1)
        rec.append(float(np.mean(am[:len(perm)] == perm)))
    errs, energy_ok = [], True
    for seed in range(10):
        s1, a, s2, b = helpers.warped_cmp(seed)
        H = hg.align_homography(s1, a, s2, b).mapping
        tt = ttps.ttps_align(ttps.build_edge_set(s1, a), ttps.build_edge_set(s2, b), H)
        errs.append(helpers.mapping_error(tt.forward, tt.backward, s1, a, s2, b).mean_error)
        energy_ok &= all(tt.energy <= e for e in tt.candidate_energies if e is not None)
    report(8, [(f"affine exactness {worst:.1e} <= 1e-6", worst <= 1e-6),
               (f"RPM recovery min {min(rec):.3f} >= 0.9 over 20 seeds", min(rec) >= 0.9),
               (f"warped CMP errors max {max(errs):.4f} < 0.05 over 10 seeds", max(errs) < 0.05),
               ("returned energy <= every candidate", energy_ok)], t0, 300)


# ---------------------------------------------------------------------------
# 9 and 11. full pipeline


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    corpus = root / "corpus"
    assert cli.main(["synth", "--out", str(corpus), "--shots", "40", "--seed", "0"]) == 0
    cfg = root / "desk.json"
    cfg.write_text(json.dumps(desk_config().to_json()))
    times, runs = [], []
    for name in ("run_a", "run_b"):
        t0 = time.perf_counter()
        code = cli.main(["pipeline", "--corpus", str(corpus), "--out", str(root / name), "--config", str(cfg)])
        times.append(time.perf_counter() - t0)
        assert code == 0
        runs.append(root / name)
    return runs, times


def tree_bytes(d):
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_c09_ttps_beats_homography(pipeline_runs):
    (run, _), _ = pipeline_runs
    m = load_artifact(run / "metrics.json", "metrics")
    h = {r["cmp"]: r for r in m["homography"]["per_cmp"]}
    t = {r["cmp"]: r for r in m["ttps"]["per_cmp"]}
    alignable = [c for c in h if h[c]["alignable"]]
    better = sum(t[c]["error"] is not None and (h[c]["error"] is None or t[c]["error"] <= h[c]["error"])
                 for c in alignable)
    frac = better / len(alignable) if alignable else 0.0
    report(9, [(f"{len(h)} CMPs >= 100", len(h) >= 100),
               (f"correct: TTPS {m['ttps']['correct']} >= homography {m['homography']['correct']}",
                m["ttps"]["correct"] >= m["homography"]["correct"]),
               (f"TTPS error <= homography on {better}/{len(alignable)} = {frac:.3f} >= 0.7", frac >= 0.7)])


def test_c10_metrics():
    iou = evaluate.landmark_iou({"left_eye", "right_eye", "neck"}, {"front_right_knee", "right_shoulder", "neck"})
    E = evaluate.AlignmentError
    thresholds = [evaluate.is_correct(E(0.1, 0.8)), not evaluate.is_correct(E(0.25, 0.8)),
                  not evaluate.is_correct(E(0.1, 0.4)), not evaluate.is_correct(E(0.18, 0.9)),
                  not evaluate.is_correct(E(0.1, 0.5)), evaluate.is_correct(E(0.1799999, 0.5000001))]
    ratios = [(i + 0.5) / 30 for i in range(30)]
    correct = [i % 3 != 0 for i in range(30)]
    pts, _ = evaluate.precision_recall(ratios, correct, 25)
    # hand-computed: threshold -> (returned, correct)
    hand = {0.1: (27, 18), 0.2: (24, 16), 0.3: (21, 14), 0.4: (18, 12), 0.5: (15, 10),
            0.6: (12, 8), 0.7: (9, 6), 0.8: (6, 4), 0.9: (3, 2)}
    pr_ok = all((p.returned, p.correct) == hand[p.threshold] and p.recall == hand[p.threshold][1] / 25
                and p.precision == hand[p.threshold][1] / hand[p.threshold][0] for p in pts) and len(pts) == 9
    report(10, [(f"worked IoU example {iou!r} == 1/5", iou == 1 / 5),
                ("is_correct honors 0.18 / 0.5 strictly", all(thresholds)),
                ("PR points equal hand-computed values on 30 CMPs", pr_ok)])


def test_c11_pipeline_deterministic(pipeline_runs):
    (a, b), times = pipeline_runs
    ta, tb = tree_bytes(a), tree_bytes(b)
    report(11, [(f"pipeline runtime {times[0]:.0f}s < 600s", times[0] < 600),
                (f"byte-identical rerun over {len(ta)} files", ta == tb),
                ("metrics report written", "metrics.txt" in ta)])

"""Stage implementations over a run directory of JSON artifacts.

Each stage reads its upstream artifacts, writes its own and records a
provenance entry (config digest, seed and input digests). Outputs hold no
timestamps, so a rerun with the same config and corpus is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import cluster, cmp as cmpmod, evaluate, homography as hg, partition as part, pot, ttps
from .config import PipelineConfig
from .datamodel import Interval, load_artifact, load_shot_bundle, save_artifact
from .synth import CORPUS_MANIFEST

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A stage cannot run or failed."""


STAGES = ("extract-pots", "partition", "cluster", "extract-cmps", "align-homography", "align-ttps",
          "evaluate")

# artifact file -> producing stage
PRODUCER = {
    "corpus.json": "extract-pots",
    "codebook.json": "partition",
    "partitions.json": "partition",
    "clusters.json": "cluster",
    "cmps.json": "extract-cmps",
    "align_homography.json": "align-homography",
    "align_ttps.json": "align-ttps",
}


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# run directory


class Run:
    def __init__(self, out, config: PipelineConfig, jobs: int = 1):
        self.dir = Path(out)
        self.cfg = config
        self.jobs = max(1, int(jobs))
        self._shots = {}

    def path(self, name) -> Path:
        return self.dir / name

    def init(self):
        """Create the run directory, refusing one made with another config."""
        self.dir.mkdir(parents=True, exist_ok=True)
        cp = self.path("config.json")
        data = {"config": self.cfg.to_json(), "digest": self.cfg.digest()}
        if cp.exists():
            old = load_artifact(cp, "config")
            if old["digest"] != data["digest"]:
                raise StageError(f"{self.dir} was created with a different config; use a new --out")
        else:
            save_artifact(cp, "config", data)

    def need(self, name):
        p = self.path(name)
        if not p.is_file():
            raise StageError(f"missing {name} in {self.dir}: run `potalign {PRODUCER[name]}` first")
        return p

    def load(self, name, kind):
        return load_artifact(self.need(name), kind)

    def provenance(self, stage, inputs, outputs):
        rec = {"stage": stage, "config_digest": self.cfg.digest(), "seed": self.cfg.seed,
               "inputs": {n: file_digest(self.path(n)) for n in inputs},
               "outputs": {n: file_digest(self.path(n)) for n in outputs}}
        save_artifact(self.path(f"provenance/{stage}.json"), "provenance", rec)

    # corpus access
    def corpus(self):
        return self.load("corpus.json", "corpus_ref")

    def shot(self, shot_id):
        if shot_id not in self._shots:
            ref = self.corpus()
            self._shots[shot_id] = load_shot_bundle(Path(ref["path"]) / ref["shots"][shot_id]["path"])
        return self._shots[shot_id]

    def map(self, fn, items):
        """Order-preserving map, in worker processes when jobs > 1."""
        if self.jobs == 1 or len(items) < 2:
            return [fn(x) for x in items]
        with ProcessPoolExecutor(self.jobs) as ex:
            return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * self.jobs))))


# ---------------------------------------------------------------------------
# stage 1: PoTs


def _pots_job(args):
    shot_path, cfg_json = args
    cfg = PipelineConfig.from_json(cfg_json)
    shot = load_shot_bundle(shot_path)
    ps = pot.extract_pots(shot, n=cfg.n, theta_p=cfg.theta_p, theta_f=cfg.theta_f,
                          max_candidates=cfg.max_candidates)
    sigma = pot.articulation_scores(shot, cfg.n).sigma
    return shot.shot_id, {"pots": ps.to_json(), "sigma": [None if not math.isfinite(x) else float(x)
                                                         for x in sigma]}


def stage_extract_pots(run: Run, corpus_dir):
    corpus_dir = Path(corpus_dir).resolve()
    man_path = corpus_dir / CORPUS_MANIFEST
    if not man_path.is_file():
        raise FileNotFoundError(f"no corpus manifest at {man_path}; run `potalign synth` or point --corpus at one")
    man = json.loads(man_path.read_text())
    shots = {e["shot_id"]: {"path": e["path"], "labels": e.get("labels", []), "n_frames": e["n_frames"]}
             for e in man["shots"]}
    save_artifact(run.path("corpus.json"), "corpus_ref",
                  {"path": str(corpus_dir), "digest": file_digest(man_path), "shots": shots})
    ids = sorted(shots)
    jobs = [(str(corpus_dir / shots[s]["path"]), run.cfg.to_json()) for s in ids]
    outs = []
    for sid, data in run.map(_pots_job, jobs):
        name = f"pots/{sid}.json"
        save_artifact(run.path(name), "pots", data)
        outs.append(name)
    log.info("PoTs extracted for %d shots", len(outs))
    run.provenance("extract-pots", ["corpus.json"], outs)
    return outs


def _load_pots(run: Run):
    ref = run.corpus()
    out = {}
    for sid in sorted(ref["shots"]):
        d = run.load(f"pots/{sid}.json", "pots") if run.path(f"pots/{sid}.json").is_file() else None
        if d is None:
            raise StageError(f"missing pots/{sid}.json: run `potalign extract-pots` first")
        sigma = np.array([np.nan if x is None else x for x in d["sigma"]], dtype=np.float64)
        out[sid] = (pot.PotSet.from_json(d["pots"]), sigma)
    return out


# ---------------------------------------------------------------------------
# stage 2: codebook and partition


def stage_partition(run: Run):
    cfg = run.cfg
    pots = _load_pots(run)
    X = np.concatenate([p.descriptors for p, _ in pots.values()]) if pots else np.zeros((0, 2 * cfg.n - 1))
    cb = cluster.build_codebook(X, V=cfg.V, runs=cfg.kmeans_runs, seed=cfg.seed, max_iter=cfg.kmeans_iter,
                                sample_cap=cfg.kmeans_sample)
    save_artifact(run.path("codebook.json"), "codebook", cb.to_json())
    ref = run.corpus()
    parts, words = {}, {}
    for sid, (ps, sigma) in pots.items():
        w = cluster.quantize(ps.descriptors, cb) if len(ps) else np.zeros(0, np.int64)
        counts = cluster.frame_counts(ps, w, len(sigma), cb.V)
        p = part.partition(sid, sigma, counts, cfg.theta_f, cfg.theta_h, cfg.min_pause, cfg.min_interval,
                           stride=cfg.periodicity_stride)
        parts[sid] = p.to_json()
        words[sid] = w.tolist()
        assert ref["shots"][sid]["n_frames"] == len(sigma)
    save_artifact(run.path("partitions.json"), "partitions", {"partitions": parts, "words": words})
    log.info("codebook V=%d, %d intervals", cb.V, sum(len(p["intervals"]) for p in parts.values()))
    inputs = ["corpus.json"] + [f"pots/{s}.json" for s in sorted(pots)]
    run.provenance("partition", inputs, ["codebook.json", "partitions.json"])


def _partition_data(run: Run):
    d = run.load("partitions.json", "partitions")
    parts = {s: part.Partition.from_json(p) for s, p in d["partitions"].items()}
    words = {s: np.asarray(w, dtype=np.int64) for s, w in d["words"].items()}
    return parts, words


# ---------------------------------------------------------------------------
# stage 3: clustering


def stage_cluster(run: Run):
    cfg = run.cfg
    cb = cluster.Codebook.from_json(run.load("codebook.json", "codebook"))
    parts, words = _partition_data(run)
    pots = _load_pots(run)
    intervals = [iv for s in sorted(parts) for iv in parts[s].intervals]
    bows = [cluster.interval_bow(iv, pots[iv.shot_id][0], words[iv.shot_id], cb.V) for iv in intervals]
    n_nonempty = sum(not b.empty for b in bows)
    k = cfg.k if cfg.k is not None else cluster.default_k(n_nonempty, cfg.cluster_fraction)
    res = cluster.cluster_bows(bows, k, items=list(range(len(intervals))))
    log.info("%d intervals in %d clusters, %d without PoTs", len(res.items), res.k, len(res.excluded))
    save_artifact(run.path("clusters.json"), "clusters",
                  {"intervals": [iv.to_json() for iv in intervals], "result": res.to_json()})
    run.provenance("cluster", ["codebook.json", "partitions.json"], ["clusters.json"])


def _clusters(run: Run):
    d = run.load("clusters.json", "clusters")
    ivs = [Interval.from_json(x) for x in d["intervals"]]
    return ivs, cluster.ClusterResult.from_json(d["result"])


def cluster_members(ivs, res):
    groups = {}
    for item, a in zip(res.items, res.assignment):
        groups.setdefault(int(a), []).append(ivs[item])
    return [groups[g] for g in sorted(groups)]


# ---------------------------------------------------------------------------
# stage 4: CMPs


def stage_extract_cmps(run: Run):
    cfg = run.cfg
    cb = cluster.Codebook.from_json(run.load("codebook.json", "codebook"))
    ivs, res = _clusters(run)
    _, words = _partition_data(run)
    pots = _load_pots(run)
    frame_bows = {s: cluster.normalize(cluster.frame_counts(p, words[s], len(sig), cb.V))
                  for s, (p, sig) in pots.items()}
    out = []
    for ci, members in enumerate(cluster_members(ivs, res)):
        for c in cmpmod.cluster_cmps(members, frame_bows, cfg.T, cfg.cmp_top_k, cfg.cmp_suppress):
            out.append({"cluster": ci, **c.to_json()})
    out.sort(key=lambda o: (-o["score"], o["seq1"]["shot"], o["seq1"]["start"], o["seq2"]["shot"],
                            o["seq2"]["start"]))
    save_artifact(run.path("cmps.json"), "cmps", out)
    log.info("%d CMPs", len(out))
    run.provenance("extract-cmps", ["clusters.json", "partitions.json", "codebook.json"], ["cmps.json"])


def _cmps(run: Run):
    return run.load("cmps.json", "cmps")


def selected_cmps(run: Run):
    cm = _cmps(run)
    if run.cfg.max_align is not None:
        cm = cm[: run.cfg.max_align]
    return [(i, cmpmod.Cmp.from_json(o)) for i, o in enumerate(cm)]


# ---------------------------------------------------------------------------
# stage 5: alignment


def ransac_params(cfg: PipelineConfig) -> hg.RansacParams:
    return hg.RansacParams(cfg.ransac_iterations, cfg.ransac_confidence, cfg.ransac_threshold, cfg.fg,
                           cfg.fg_weight, cfg.min_inlier_ratio)


def rpm_params(cfg: PipelineConfig) -> ttps.RpmParams:
    return ttps.RpmParams(rate=cfg.anneal_rate, final_px=cfg.anneal_final_px, start_px=cfg.anneal_start_px,
                          lambda_init=cfg.lambda_init, max_control=cfg.max_control, harden=cfg.harden)


def _shot_path(ref, sid):
    return str(Path(ref["path"]) / ref["shots"][sid]["path"])


_SHOT_CACHE = {}


def _cached_shot(path):
    if path not in _SHOT_CACHE:
        if len(_SHOT_CACHE) > 8:
            _SHOT_CACHE.clear()
        _SHOT_CACHE[path] = load_shot_bundle(path)
    return _SHOT_CACHE[path]


def _homography_job(args):
    idx, c_json, p1, p2, cfg_json = args
    cfg = PipelineConfig.from_json(cfg_json)
    c = cmpmod.Cmp.from_json(c_json)
    res = hg.align_homography(_cached_shot(p1), c.seq1.start, _cached_shot(p2), c.seq2.start, c.T,
                              ransac_params(cfg), cfg.method, seed=[cfg.seed, idx])
    return {"cmp": idx, **res.to_json()}


def stage_align_homography(run: Run):
    ref = run.corpus()
    cm = selected_cmps(run)
    jobs = [(i, c.to_json(), _shot_path(ref, c.seq1.shot_id), _shot_path(ref, c.seq2.shot_id),
             run.cfg.to_json()) for i, c in cm]
    out = run.map(_homography_job, jobs)
    save_artifact(run.path("align_homography.json"), "alignments", out)
    run.provenance("align-homography", ["cmps.json", "corpus.json"], ["align_homography.json"])


def mapping_from_json(o):
    if o is None:
        return None
    if o["type"] == "homography":
        return hg.Homography.from_json(o)
    if o["type"] == "ttps":
        return ttps.Ttps.from_json(o)
    raise ValueError(f"unknown mapping type {o['type']!r}")


def _ttps_job(args):
    idx, c_json, h_json, p1, p2, cfg_json = args
    cfg = PipelineConfig.from_json(cfg_json)
    c = cmpmod.Cmp.from_json(c_json)
    H = mapping_from_json(h_json["mapping"])
    diag = {"method": "ttps", "fallback": False}
    if H is None:
        diag.update(fallback=True, reason="no homography")
        return {"cmp": idx, "mapping": None, "inlier_ratio": h_json["inlier_ratio"], "accepted": False,
                "diagnostics": diag}
    s1, s2 = _cached_shot(p1), _cached_shot(p2)
    mapping = H.to_json()
    try:
        eu = ttps.build_edge_set(s1, c.seq1.start, c.T, cfg.edge_prune, cfg.edge_max, cfg.edge_sigma,
                                 cfg.edge_spacing)
        ev = ttps.build_edge_set(s2, c.seq2.start, c.T, cfg.edge_prune, cfg.edge_max, cfg.edge_sigma,
                                 cfg.edge_spacing)
        tt = ttps.ttps_align(eu, ev, H, rpm_params(cfg))
        mapping = tt.to_json()
        diag.update(tau=tt.tau, energy=tt.energy, pairs=len(tt.pairs))
    except (hg.FitError, ttps.EmptyEdges, np.linalg.LinAlgError) as exc:
        diag.update(fallback=True, reason=str(exc))
    return {"cmp": idx, "mapping": mapping, "inlier_ratio": h_json["inlier_ratio"],
            "accepted": h_json["accepted"], "diagnostics": diag}


def stage_align_ttps(run: Run):
    ref = run.corpus()
    cm = selected_cmps(run)
    homs = {o["cmp"]: o for o in run.load("align_homography.json", "alignments")}
    jobs = []
    for i, c in cm:
        if i not in homs:
            raise StageError("homography results do not cover the CMP list: rerun `potalign align-homography`")
        jobs.append((i, c.to_json(), homs[i], _shot_path(ref, c.seq1.shot_id), _shot_path(ref, c.seq2.shot_id),
                     run.cfg.to_json()))
    out = run.map(_ttps_job, jobs)
    log.info("TTPS for %d CMPs, %d fell back to the homography", len(out),
             sum(o["diagnostics"]["fallback"] for o in out))
    save_artifact(run.path("align_ttps.json"), "alignments", out)
    run.provenance("align-ttps", ["cmps.json", "align_homography.json", "corpus.json"], ["align_ttps.json"])


def write_overlays(run: Run, out_dir, limit: int = 5):
    """PGM overlays of warped source masks on target frames for the first CMPs."""
    from .datamodel import write_pgm

    out_dir = Path(out_dir)
    cm = dict(selected_cmps(run))
    for o in run.load("align_ttps.json", "alignments")[:limit]:
        mp = mapping_from_json(o["mapping"])
        if mp is None:
            continue
        c = cm[o["cmp"]]
        s1, s2 = run.shot(c.seq1.shot_id), run.shot(c.seq2.shot_id)
        for t in range(c.T):
            fwd = (lambda p, t=t: mp.forward(t, p)) if isinstance(mp, ttps.Ttps) else mp.apply
            img = ttps.overlay(s1.masks[c.seq1.start + t], s2.masks[c.seq2.start + t], fwd)
            write_pgm(out_dir / f"cmp{o['cmp']:05d}_t{t:02d}.pgm", img)


# ---------------------------------------------------------------------------
# stage 6: evaluation


def majority_label(labels, iv: Interval):
    seg = labels[iv.start_frame:iv.end_frame + 1]
    return Counter(seg).most_common(1)[0][0] if seg else None


def _mapping_fns(mp):
    if isinstance(mp, ttps.Ttps):
        return mp.forward, mp.backward
    inv = mp.inverse()
    return (lambda t, p: mp.apply(p)), (lambda t, p: inv.apply(p))


def alignment_rows(run: Run, name):
    cfg = run.cfg
    cm = dict(selected_cmps(run))
    rows = []
    for o in run.load(name, "alignments"):
        c = cm[o["cmp"]]
        s1, s2 = run.shot(c.seq1.shot_id), run.shot(c.seq2.shot_id)
        l1 = s1.landmarks[c.seq1.start:c.seq1.start + c.T] if s1.landmarks else None
        l2 = s2.landmarks[c.seq2.start:c.seq2.start + c.T] if s2.landmarks else None
        if l1 is None or l2 is None:
            continue
        alignable = evaluate.alignable_oracle(l1, l2, cfg.error_threshold, cfg.iou_threshold)
        mp = mapping_from_json(o["mapping"])
        if mp is None:
            err = evaluate.AlignmentError(math.inf, 0.0)
        else:
            err = evaluate.alignment_error(*_mapping_fns(mp), l1, l2)
        correct = evaluate.is_correct(err, cfg.error_threshold, cfg.iou_threshold)
        rows.append({"cmp": o["cmp"], "alignable": alignable, "correct": correct,
                     "error": err.mean_error if err.defined else None, "iou": err.landmark_iou,
                     "inlier_ratio": o["inlier_ratio"], "returned": mp is not None,
                     "per_frame": [_num(e) for e in err.per_frame]})
    return rows


def _pr(rows, cfg):
    n_alignable = sum(r["alignable"] for r in rows)
    ratios = [r["inlier_ratio"] if r["returned"] else -1.0 for r in rows]
    pts, ap = evaluate.precision_recall(ratios, [r["correct"] for r in rows], n_alignable,
                                        evaluate.default_sweep(cfg.pr_points))
    return pts, ap, n_alignable


def _num(x):
    return None if x is None or (isinstance(x, float) and not math.isfinite(x)) else x


def stage_evaluate(run: Run):
    cfg = run.cfg
    ref = run.corpus()
    labels = {s: e["labels"] for s, e in ref["shots"].items()}
    ivs, res = _clusters(run)
    parts, _ = _partition_data(run)
    metrics = {"config_digest": cfg.digest()}
    clustered = [ivs[i] for i in res.items]
    lab = [majority_label(labels[iv.shot_id], iv) for iv in clustered]
    if all(x is not None for x in lab) and lab:
        metrics["clustering"] = {"k": res.k, "items": len(clustered), "excluded": len(res.excluded),
                                 "purity": evaluate.purity(res.assignment, lab),
                                 "ari": evaluate.ari(res.assignment, lab) if len(lab) > 1 else None}
    all_ivs = [iv for s in sorted(parts) for iv in parts[s].intervals]
    if all_ivs and all(labels[iv.shot_id] for iv in all_ivs):
        u = [evaluate.uniformity(labels[iv.shot_id][iv.start_frame:iv.end_frame + 1]) for iv in all_ivs]
        metrics["partition"] = {"intervals": len(all_ivs), "mean_uniformity": float(np.mean(u))}
    inputs = ["clusters.json", "partitions.json", "corpus.json"]
    table = []
    for name, key in (("align_homography.json", "homography"), ("align_ttps.json", "ttps")):
        if not run.path(name).is_file():
            if key == "homography":
                run.need(name)
            continue
        inputs.append(name)
        rows = alignment_rows(run, name)
        pts, ap, n_al = _pr(rows, cfg)
        errs = [r["error"] for r in rows if r["error"] is not None]
        metrics[key] = {"cmps": len(rows), "alignable": n_al, "correct": sum(r["correct"] for r in rows),
                        "median_error": float(np.median(errs)) if errs else None,
                        "average_precision": _num(ap),
                        "pr": [{"threshold": p.threshold, "returned": p.returned, "correct": p.correct,
                                "recall": _num(p.recall), "precision": _num(p.precision)} for p in pts],
                        "per_cmp": [{k: v if k == "per_frame" else _num(v) for k, v in r.items()} for r in rows]}
        run.path(f"pr_{key}.csv").write_text(evaluate.pr_csv(pts))
        table.append([key, len(rows), n_al, metrics[key]["correct"],
                      "-" if metrics[key]["median_error"] is None else f"{metrics[key]['median_error']:.4f}",
                      "-" if _num(ap) is None else f"{ap:.4f}"])
    save_artifact(run.path("metrics.json"), "metrics", metrics)
    text = []
    if "clustering" in metrics:
        c = metrics["clustering"]
        text.append(f"clustering: k={c['k']} purity={c['purity']:.4f} ari={c['ari']}")
    if "partition" in metrics:
        text.append(f"partition: intervals={metrics['partition']['intervals']} "
                    f"uniformity={metrics['partition']['mean_uniformity']:.4f}")
    body = "\n".join(text) + "\n"
    if table:
        body += evaluate.text_table(table, ["mapping", "cmps", "alignable", "correct", "median_error", "AP"])
    run.path("metrics.txt").write_text(body)
    run.provenance("evaluate", inputs, ["metrics.json", "metrics.txt"])
    return metrics


def run_pipeline(run: Run, corpus_dir):
    stage_extract_pots(run, corpus_dir)
    stage_partition(run)
    stage_cluster(run)
    stage_extract_cmps(run)
    stage_align_homography(run)
    stage_align_ttps(run)
    return stage_evaluate(run)

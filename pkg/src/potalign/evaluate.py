"""Clustering, partitioning and alignment metrics."""

from __future__ import annotations

import io
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np


class UndefinedMetric(ValueError):
    pass


# ---------------------------------------------------------------------------
# clustering and intervals


def purity(assignment, labels) -> float:
    """Sum over clusters of the dominant label count, over the item count."""
    assignment, labels = list(assignment), list(labels)
    if len(assignment) != len(labels):
        raise ValueError("assignment and labels differ in length")
    if not labels:
        raise UndefinedMetric("purity of an empty clustering")
    groups = {}
    for a, lab in zip(assignment, labels):
        groups.setdefault(a, Counter())[lab] += 1
    return sum(c.most_common(1)[0][1] for c in groups.values()) / len(labels)


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1) / 2


def ari(assignment, labels) -> float:
    """Pair-counting adjusted Rand index."""
    assignment, labels = list(assignment), list(labels)
    n = len(labels)
    if n != len(assignment):
        raise ValueError("assignment and labels differ in length")
    if n < 2:
        raise UndefinedMetric("ARI needs at least two items")
    _, a = np.unique(np.asarray(assignment, dtype=object).astype(str), return_inverse=True)
    _, b = np.unique(np.asarray(labels, dtype=object).astype(str), return_inverse=True)
    table = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(table, (a, b), 1)
    index = _comb2(table).sum()
    sa, sb = _comb2(table.sum(1)).sum(), _comb2(table.sum(0)).sum()
    expected = sa * sb / _comb2(n)
    top = (sa + sb) / 2
    if top == expected:  # both partitions trivial in the same way
        return 1.0
    return float((index - expected) / (top - expected))


def uniformity(labels) -> float:
    """Fraction of frames carrying the most frequent label."""
    labels = list(labels)
    if not labels:
        raise UndefinedMetric("uniformity of an empty interval")
    return Counter(labels).most_common(1)[0][1] / len(labels)


# ---------------------------------------------------------------------------
# alignment


@dataclass
class AlignmentError:
    mean_error: float
    landmark_iou: float
    per_frame: list = field(default_factory=list)
    per_landmark: dict = field(default_factory=dict)

    @property
    def defined(self) -> bool:
        return math.isfinite(self.mean_error)

    def to_json(self):
        return {"mean_error": self.mean_error if self.defined else None,
                "landmark_iou": self.landmark_iou,
                "per_frame": [e if e is not None and math.isfinite(e) else None for e in self.per_frame],
                "per_landmark": dict(sorted(self.per_landmark.items()))}


def object_scale(points) -> float:
    """Largest distance between any two landmarks."""
    P = np.asarray(list(points), dtype=np.float64).reshape(-1, 2)
    if len(P) < 2:
        return 0.0
    d = np.linalg.norm(P[:, None] - P[None], axis=2)
    return float(d.max())


def landmark_iou(names1, names2) -> float:
    a, b = set(names1), set(names2)
    if not a | b:
        return 0.0
    return len(a & b) / len(a | b)


def alignment_error(forward, backward, landmarks1, landmarks2) -> AlignmentError:
    """Bidirectional, scale-normalized landmark transfer error.

    ``forward(t, pts)`` maps frame t of sequence 2 into sequence 1 and
    ``backward(t, pts)`` the reverse. Each direction is normalized by the
    object scale of the frame mapped into; the two are averaged per
    landmark. The IoU compares the visible landmark names of the sequences.
    """
    vis1 = [lm.visible() if lm is not None else {} for lm in landmarks1]
    vis2 = [lm.visible() if lm is not None else {} for lm in landmarks2]
    iou = landmark_iou(set().union(*vis1) if vis1 else set(), set().union(*vis2) if vis2 else set())
    errs, per_frame, per_lm = [], [], {}
    for t, (v1, v2) in enumerate(zip(vis1, vis2)):
        common = sorted(set(v1) & set(v2))
        s1, s2 = object_scale(v1.values()), object_scale(v2.values())
        if not common or s1 <= 0 or s2 <= 0:
            per_frame.append(None)
            continue
        u = np.array([v1[k] for k in common])
        v = np.array([v2[k] for k in common])
        fwd = np.linalg.norm(np.asarray(forward(t, v)) - u, axis=1) / s1
        bwd = np.linalg.norm(np.asarray(backward(t, u)) - v, axis=1) / s2
        e = 0.5 * (fwd + bwd)
        errs.extend(e.tolist())
        per_frame.append(float(e.mean()))
        for k, x in zip(common, e):
            per_lm.setdefault(k, []).append(float(x))
    mean = float(np.mean(errs)) if errs else math.inf
    return AlignmentError(mean, iou, per_frame, {k: float(np.mean(v)) for k, v in per_lm.items()})


def is_correct(err: AlignmentError, error_threshold: float = 0.18, iou_threshold: float = 0.5) -> bool:
    return err.defined and err.mean_error < error_threshold and err.landmark_iou > iou_threshold


def landmark_correspondences(landmarks1, landmarks2):
    """(v, u) point arrays of landmarks visible in both sequences, all frames pooled."""
    us, vs = [], []
    for l1, l2 in zip(landmarks1, landmarks2):
        if l1 is None or l2 is None:
            continue
        v1, v2 = l1.visible(), l2.visible()
        for k in sorted(set(v1) & set(v2)):
            us.append(v1[k])
            vs.append(v2[k])
    return np.array(vs).reshape(-1, 2), np.array(us).reshape(-1, 2)


def alignable_oracle(landmarks1, landmarks2, error_threshold: float = 0.18,
                     iou_threshold: float = 0.5) -> bool:
    """Whether a homography fitted to ground-truth landmarks passes the correctness test."""
    from .homography import FitError, Homography, fit_homography

    v, u = landmark_correspondences(landmarks1, landmarks2)
    if len(v) < 4:
        return False
    try:
        H = fit_homography(v, u)
        Hinv = Homography.from_matrix(np.linalg.inv(H.H))
    except (FitError, np.linalg.LinAlgError):
        return False
    err = alignment_error(lambda t, p: H.apply(p), lambda t, p: Hinv.apply(p), landmarks1, landmarks2)
    return is_correct(err, error_threshold, iou_threshold)


# ---------------------------------------------------------------------------
# precision / recall


@dataclass(frozen=True)
class PrPoint:
    threshold: float
    returned: int
    correct: int
    recall: float  # NaN when nothing is alignable
    precision: float  # NaN when nothing is returned


def default_sweep(n: int = 9):
    return [round(x, 10) for x in np.linspace(0.1, 0.9, n)]


def precision_recall(inlier_ratios, correct, n_alignable: int, sweep=None):
    """PR points over minimum-inlier-ratio thresholds plus average precision.

    At threshold q a result is returned when its inlier ratio is >= q.
    Recall is correct/alignable and precision correct/returned.
    """
    sweep = default_sweep() if sweep is None else list(sweep)
    r = np.asarray(inlier_ratios, dtype=np.float64)
    c = np.asarray(correct, dtype=bool)
    pts = []
    for q in sweep:
        ret = r >= q
        n = int(ret.sum())
        k = int((ret & c).sum())
        rec = k / n_alignable if n_alignable > 0 else math.nan
        prec = k / n if n > 0 else math.nan
        pts.append(PrPoint(float(q), n, k, rec, prec))
    return pts, average_precision(pts)


def average_precision(points) -> float:
    """Step-wise area under the PR points, ordered by recall."""
    ok = [p for p in points if math.isfinite(p.recall) and math.isfinite(p.precision)]
    if not ok:
        return math.nan
    ok.sort(key=lambda p: (p.recall, -p.precision))
    ap, prev = 0.0, 0.0
    for p in ok:
        ap += (p.recall - prev) * p.precision
        prev = p.recall
    return ap


def pr_csv(points) -> str:
    out = io.StringIO()
    out.write("threshold,recall,precision\n")
    for p in points:
        out.write(f"{p.threshold!r},{p.recall!r},{p.precision!r}\n")
    return out.getvalue()


def text_table(rows, headers) -> str:
    cols = [headers] + [[str(x) for x in r] for r in rows]
    widths = [max(len(c[i]) for c in cols) for i in range(len(headers))]
    lines = ["  ".join(c[i].ljust(widths[i]) for i in range(len(headers))) for c in cols]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"

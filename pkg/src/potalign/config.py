"""Pipeline parameters, loaded from and saved to JSON."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    # PoTs
    n: int = 10
    theta_p: float = 0.15
    theta_f: float = 0.1
    max_candidates: int = 500
    # codebook
    V: int = 800
    kmeans_runs: int = 8
    kmeans_iter: int = 100
    kmeans_sample: int = 200_000
    # partitioning
    theta_h: float = 0.1
    min_pause: int = 3
    min_interval: int = 2
    periodicity_stride: int = 2
    # clustering
    cluster_fraction: float = 0.25
    k: int | None = None  # fixed cluster count; default is cluster_fraction of the intervals
    # CMPs
    T: int = 10
    cmp_top_k: int = 10
    cmp_suppress: int = 2
    max_align: int | None = None  # align only the best-scoring CMPs when set
    # homography
    method: str = "tm"
    ransac_iterations: int = 2000
    ransac_confidence: float = 0.999
    ransac_threshold: float = 0.05
    fg: bool = True
    fg_weight: float | None = None
    min_inlier_ratio: float = 0.0
    # TTPS
    edge_prune: float = 0.2
    edge_max: int = 1000
    edge_spacing: float = 2.5
    edge_sigma: float = 0.05
    anneal_rate: float = 0.93
    anneal_final_px: float = 2.0
    anneal_start_px: float = 8.0
    lambda_init: float = 1.0
    harden: float = 0.5
    max_control: int = 300
    # evaluation
    error_threshold: float = 0.18
    iou_threshold: float = 0.5
    pr_points: int = 9
    seed: int = 0

    def __post_init__(self):
        checks = [
            (self.n >= 2, "n must be at least 2"),
            (self.T >= 2, "T must be at least 2"),
            (0 < self.theta_p <= 1, "theta_p must lie in (0, 1]"),
            (self.theta_f >= 0, "theta_f must be non-negative"),
            (0 <= self.theta_h <= 1, "theta_h must lie in [0, 1]"),
            (self.V >= 2, "V must be at least 2"),
            (self.kmeans_runs >= 1 and self.kmeans_iter >= 1, "k-means needs a run and an iteration"),
            (0 < self.cluster_fraction <= 1, "cluster_fraction must lie in (0, 1]"),
            (self.k is None or self.k >= 1, "k must be positive"),
            (self.cmp_top_k >= 1, "cmp_top_k must be positive"),
            (self.method in ("tm", "im"), "method must be 'tm' or 'im'"),
            (self.ransac_iterations >= 1, "ransac_iterations must be positive"),
            (0 < self.ransac_confidence < 1, "ransac_confidence must lie in (0, 1)"),
            (self.ransac_threshold > 0, "ransac_threshold must be positive"),
            (0 <= self.min_inlier_ratio <= 1, "min_inlier_ratio must lie in [0, 1]"),
            (0 <= self.edge_prune < 1, "edge_prune must lie in [0, 1)"),
            (self.edge_max >= 3, "edge_max must be at least 3"),
            (0 < self.anneal_rate < 1, "anneal_rate must lie in (0, 1)"),
            (0 < self.anneal_final_px < self.anneal_start_px, "need 0 < anneal_final_px < anneal_start_px"),
            (0 <= self.harden <= 1, "harden must lie in [0, 1]"),
            (self.error_threshold > 0, "error_threshold must be positive"),
            (0 <= self.iou_threshold <= 1, "iou_threshold must lie in [0, 1]"),
            (self.pr_points >= 1, "pr_points must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, obj):
        known = {f.name for f in fields(cls)}
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(extra))}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path):
        try:
            obj = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_json(obj)

    def canonical(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def with_(self, **kw) -> "PipelineConfig":
        return replace(self, **kw)


def desk_config(**overrides) -> PipelineConfig:
    """Settings sized for the 40-shot synthetic corpus on one laptop.

    The codebook is smaller (synthetic shots carry a few hundred thousand
    PoTs of limited variety) and only the best CMPs per interval pair are
    aligned.
    """
    base = dict(V=100, kmeans_runs=2, kmeans_sample=20_000, cmp_top_k=1, max_align=120)
    base.update(overrides)
    return PipelineConfig(**base)

"""Core domain types, shot-bundle I/O and artifact serialization.

Grids are row-major with the origin at the top-left pixel, x to the right and
y downward. Pixel ``(row, col)`` has its center at ``(x=col, y=row)``.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .kernels import bilinear_sample

log = logging.getLogger(__name__)

ARTIFACT_VERSION = 1

# Fixed landmark schema (19 names).
LANDMARK_NAMES = (
    "left_eye",
    "right_eye",
    "neck",
    "chin",
    "left_shoulder",
    "right_shoulder",
    "tail_base",
    *(f"{leg}_{joint}"
      for leg in ("front_left", "front_right", "back_left", "back_right")
      for joint in ("knee", "ankle", "foot")),
)

INTERVAL_SOURCES = ("whole_shot", "pause_split", "periodic_split", "ground_truth")


class BundleError(ValueError):
    """Malformed shot bundle; carries the offending file and frame index."""

    def __init__(self, message, path=None, frame=None):
        where = []
        if path is not None:
            where.append(f"file={path}")
        if frame is not None:
            where.append(f"frame={frame}")
        super().__init__(message + (f" ({', '.join(where)})" if where else ""))
        self.path = path
        self.frame = frame


def _frozen(a, dtype=None):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Trajectory:
    traj_id: int
    start_frame: int
    points: np.ndarray  # (L, 2) float64
    label: str | None = None  # generator part tag, absent for real data

    def __post_init__(self):
        pts = _frozen(self.points, np.float64).reshape(-1, 2)
        if len(pts) < 2:
            raise ValueError(f"trajectory {self.traj_id} has fewer than 2 points")
        object.__setattr__(self, "points", pts)

    @property
    def end_frame(self) -> int:
        return self.start_frame + len(self.points) - 1

    def __len__(self):
        return len(self.points)

    def spans(self, first: int, last: int) -> bool:
        return self.start_frame <= first and self.end_frame >= last

    def window(self, first: int, last: int) -> np.ndarray:
        """Positions for frames ``first..last`` inclusive."""
        i0 = first - self.start_frame
        return self.points[i0:i0 + last - first + 1]

    def __eq__(self, other):
        return (isinstance(other, Trajectory) and self.traj_id == other.traj_id
                and self.start_frame == other.start_frame and self.label == other.label
                and np.array_equal(self.points, other.points))

    __hash__ = None


@dataclass(frozen=True)
class LandmarkSet:
    """Landmark name -> ((x, y), visible)."""

    entries: dict

    def __post_init__(self):
        if len(self.entries) > len(LANDMARK_NAMES):
            raise ValueError("more than 19 landmarks")
        clean = {}
        for name, (xy, vis) in self.entries.items():
            if name not in LANDMARK_NAMES:
                raise ValueError(f"unknown landmark name {name!r}")
            clean[name] = ((float(xy[0]), float(xy[1])), bool(vis))
        object.__setattr__(self, "entries", clean)

    def visible(self) -> dict:
        return {k: np.array(xy) for k, (xy, vis) in self.entries.items() if vis}

    def to_json(self):
        return {k: {"xy": list(xy), "visible": vis} for k, (xy, vis) in sorted(self.entries.items())}

    @classmethod
    def from_json(cls, obj):
        return cls({k: (v["xy"], v["visible"]) for k, v in obj.items()})


@dataclass(frozen=True)
class FrameData:
    flow: np.ndarray | None  # (H, W, 2) float32, displacement to next frame
    mask: np.ndarray  # (H, W) bool
    edge_strength: np.ndarray  # (H, W) float32 in [0, 1]
    landmarks: LandmarkSet | None = None
    behavior_label: str | None = None

    @property
    def height(self):
        return self.mask.shape[0]

    @property
    def width(self):
        return self.mask.shape[1]


class Shot:
    """A shot bundle held as stacked per-frame grids.

    ``flow`` has shape (N_flow, H, W, 2) where N_flow is N or N - 1 (the last
    frame's flow may be absent). Arrays are read-only.
    """

    def __init__(self, shot_id, class_label, masks, flow, edges, trajectories=(),
                 landmarks=None, labels=None, keep_largest_component=True):
        masks = np.asarray(masks).astype(bool)
        if masks.ndim != 3 or masks.shape[0] == 0:
            raise BundleError("masks must be a non-empty (N, H, W) stack")
        n, h, w = masks.shape
        flow = np.asarray(flow, dtype=np.float32)
        edges = np.asarray(edges, dtype=np.float32)
        if flow.ndim != 4 or flow.shape[1:] != (h, w, 2):
            raise BundleError(f"flow grid shape {flow.shape[1:3]} does not match mask {(h, w)}")
        if flow.shape[0] not in (n, n - 1):
            raise BundleError(f"expected {n} or {n - 1} flow frames, got {flow.shape[0]}")
        if edges.shape != (n, h, w):
            raise BundleError(f"edge grid shape {edges.shape} does not match mask {(n, h, w)}")
        if keep_largest_component:
            masks = np.stack([largest_component(m) for m in masks])
        self.shot_id = str(shot_id)
        self.class_label = str(class_label)
        self.masks = _frozen(masks)
        self.flow = _frozen(flow)
        self.edges = _frozen(np.clip(edges, 0.0, 1.0))
        self.trajectories = tuple(trajectories)
        if landmarks is not None and len(landmarks) != n:
            raise BundleError(f"landmarks list has {len(landmarks)} entries for {n} frames")
        if labels is not None and len(labels) != n:
            raise BundleError(f"labels list has {len(labels)} entries for {n} frames")
        self.landmarks = tuple(landmarks) if landmarks is not None else None
        self.labels = tuple(labels) if labels is not None else None

    @property
    def n_frames(self) -> int:
        return self.masks.shape[0]

    @property
    def height(self) -> int:
        return self.masks.shape[1]

    @property
    def width(self) -> int:
        return self.masks.shape[2]

    def has_flow(self, k: int) -> bool:
        return 0 <= k < self.flow.shape[0]

    def frame(self, k: int) -> FrameData:
        return FrameData(
            flow=self.flow[k] if self.has_flow(k) else None,
            mask=self.masks[k],
            edge_strength=self.edges[k],
            landmarks=self.landmarks[k] if self.landmarks else None,
            behavior_label=self.labels[k] if self.labels else None,
        )

    @property
    def frames(self):
        return [self.frame(k) for k in range(self.n_frames)]

    def trajectory_map(self) -> dict:
        return {t.traj_id: t for t in self.trajectories}

    def __eq__(self, other):
        if not isinstance(other, Shot):
            return NotImplemented
        return (self.shot_id == other.shot_id and self.class_label == other.class_label
                and np.array_equal(self.masks, other.masks)
                and np.array_equal(self.flow, other.flow)
                and np.array_equal(self.edges, other.edges)
                and self.trajectories == other.trajectories
                and self.landmarks == other.landmarks and self.labels == other.labels)

    __hash__ = None

    def __repr__(self):
        return (f"Shot({self.shot_id!r}, frames={self.n_frames}, size={self.width}x{self.height}, "
                f"trajectories={len(self.trajectories)})")


@dataclass(frozen=True, order=True)
class Interval:
    shot_id: str
    start_frame: int
    end_frame: int
    source: str = field(default="whole_shot", compare=False)

    def __post_init__(self):
        if self.start_frame > self.end_frame:
            raise ValueError(f"interval start {self.start_frame} > end {self.end_frame}")
        if self.source not in INTERVAL_SOURCES:
            raise ValueError(f"unknown interval source {self.source!r}")

    def __len__(self):
        return self.end_frame - self.start_frame + 1

    @property
    def frames(self):
        return range(self.start_frame, self.end_frame + 1)

    def to_json(self):
        return {"shot_id": self.shot_id, "start": self.start_frame, "end": self.end_frame,
                "source": self.source}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["shot_id"], int(obj["start"]), int(obj["end"]), obj.get("source", "whole_shot"))


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Keep only the largest 8-connected foreground component."""
    lab, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    if n <= 1:
        return mask.astype(bool)
    sizes = np.bincount(lab.ravel())
    sizes[0] = 0
    return lab == int(np.argmax(sizes))


# ---------------------------------------------------------------------------
# Bundle I/O

MANIFEST = "manifest.json"
DEFAULT_FILES = {
    "mask": "mask_{:05d}.pgm",
    "flow": "flow_{:05d}.f32",
    "edge": "edge_{:05d}.f32",
    "trajectories": "trajectories.json",
    "landmarks": "landmarks.json",
    "labels": "labels.json",
}


def write_pgm(path, mask):
    """Binary P5 image; boolean masks become 0/255, uint8 images are kept."""
    mask = np.asarray(mask)
    img = mask.astype(np.uint8) * 255 if mask.dtype == bool else mask.astype(np.uint8)
    h, w = img.shape
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise BundleError("not a binary PGM (P5)", path=path)
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise BundleError(f"unsupported PGM maxval {maxval}", path=path)
    raw = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return raw.reshape(h, w) != 0


def _write_f32(path, arr):
    np.ascontiguousarray(arr, dtype="<f4").tofile(path)


def _read_f32(path, shape, frame):
    arr = np.fromfile(path, dtype="<f4")
    if arr.size != int(np.prod(shape)):
        raise BundleError(f"dimension mismatch: expected {int(np.prod(shape))} floats, found {arr.size}",
                          path=path, frame=frame)
    return arr.reshape(shape).astype(np.float32)


def trajectories_to_json(trajectories):
    out = []
    for t in trajectories:
        item = {"id": int(t.traj_id), "start": int(t.start_frame), "points": t.points.tolist()}
        if t.label is not None:
            item["label"] = t.label
        out.append(item)
    return out


def trajectories_from_json(obj):
    return [Trajectory(int(o["id"]), int(o["start"]), np.asarray(o["points"], dtype=np.float64),
                       o.get("label")) for o in obj]


def save_shot_bundle(shot: Shot, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    files = dict(DEFAULT_FILES)
    manifest = {
        "version": ARTIFACT_VERSION,
        "shot_id": shot.shot_id,
        "class_label": shot.class_label,
        "n_frames": shot.n_frames,
        "n_flow": int(shot.flow.shape[0]),
        "width": shot.width,
        "height": shot.height,
        "files": files,
    }
    for k in range(shot.n_frames):
        write_pgm(path / files["mask"].format(k), shot.masks[k])
        _write_f32(path / files["edge"].format(k), shot.edges[k])
        if shot.has_flow(k):
            _write_f32(path / files["flow"].format(k), shot.flow[k])
    _dump_json(path / files["trajectories"], trajectories_to_json(shot.trajectories))
    if shot.landmarks is not None:
        _dump_json(path / files["landmarks"],
                   [lm.to_json() if lm is not None else None for lm in shot.landmarks])
    if shot.labels is not None:
        _dump_json(path / files["labels"], list(shot.labels))
    _dump_json(path / MANIFEST, manifest)
    return path


def load_shot_bundle(path, overrun="truncate", keep_largest_component=True) -> Shot:
    """Load and validate a shot bundle directory.

    ``overrun`` controls trajectories running past the last frame: "truncate"
    clips them (dropping any left with fewer than 2 points), "reject" drops them.
    """
    path = Path(path)
    mpath = path / MANIFEST
    if not mpath.is_file():
        raise BundleError("missing manifest", path=mpath)
    man = json.loads(mpath.read_text())
    try:
        n, w, h = int(man["n_frames"]), int(man["width"]), int(man["height"])
    except KeyError as exc:
        raise BundleError(f"manifest lacks field {exc}", path=mpath) from None
    files = {**DEFAULT_FILES, **man.get("files", {})}
    n_flow = int(man.get("n_flow", n - 1))
    masks, edges, flows = [], [], []
    for k in range(n):
        mp = path / files["mask"].format(k)
        if not mp.is_file():
            raise BundleError("missing mask", path=mp, frame=k)
        m = read_pgm(mp)
        if m.shape != (h, w):
            raise BundleError(f"dimension mismatch: mask is {m.shape[1]}x{m.shape[0]}, manifest {w}x{h}",
                              path=mp, frame=k)
        masks.append(m)
        edges.append(_read_f32(path / files["edge"].format(k), (h, w), k))
        if k < n_flow:
            fp = path / files["flow"].format(k)
            if not fp.is_file():
                raise BundleError("missing flow", path=fp, frame=k)
            flows.append(_read_f32(fp, (h, w, 2), k))

    trajectories = []
    tp = path / files["trajectories"]
    if tp.is_file():
        for o in json.loads(tp.read_text()):
            start = int(o["start"])
            if start < 0 or start >= n:
                raise BundleError(f"trajectory {o['id']} starts at out-of-range frame", path=tp, frame=start)
            pts = np.asarray(o["points"], dtype=np.float64).reshape(-1, 2)
            last = start + len(pts) - 1
            if last >= n:
                if overrun == "reject":
                    log.warning("dropping trajectory %s overrunning shot (ends at %d)", o["id"], last)
                    continue
                pts = pts[: n - start]
            if len(pts) < 2:
                continue
            trajectories.append(Trajectory(int(o["id"]), start, pts, o.get("label")))

    landmarks = None
    lp = path / files["landmarks"]
    if lp.is_file():
        raw = json.loads(lp.read_text())
        landmarks = [LandmarkSet.from_json(x) if x is not None else None for x in raw]
    labels = None
    bp = path / files["labels"]
    if bp.is_file():
        labels = json.loads(bp.read_text())
    try:
        return Shot(man["shot_id"], man.get("class_label", ""), np.stack(masks),
                    np.stack(flows) if flows else np.zeros((0, h, w, 2), np.float32),
                    np.stack(edges), trajectories, landmarks, labels,
                    keep_largest_component=keep_largest_component)
    except BundleError as exc:
        raise BundleError(str(exc), path=path) from None


# ---------------------------------------------------------------------------
# Artifact serialization


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, separators=(",", ":")))


def save_artifact(path, kind: str, data) -> Path:
    """Write an intermediate artifact as versioned, key-sorted JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    _dump_json(tmp, {"version": ARTIFACT_VERSION, "kind": kind, "data": data})
    os.replace(tmp, path)
    return path


def load_artifact(path, kind: str | None = None):
    obj = json.loads(Path(path).read_text())
    if obj.get("version") != ARTIFACT_VERSION:
        raise ValueError(f"{path}: unsupported artifact version {obj.get('version')}")
    if kind is not None and obj.get("kind") != kind:
        raise ValueError(f"{path}: expected artifact kind {kind!r}, found {obj.get('kind')!r}")
    return obj["data"]


# ---------------------------------------------------------------------------
# Flow-advection tracker (stand-in for an external dense tracker)


def advect_tracker(shot: Shot, grid_step: int = 4, traj_len: int = 15,
                   frames: Iterable[int] | None = None) -> list[Trajectory]:
    """Seed grid points inside the mask and advect them through the flow.

    New seeds are placed on a regular grid every frame, skipping grid cells
    already occupied by a live track. Each track follows bilinear flow lookups
    for up to ``traj_len`` frames and stops when it leaves the grid or mask.
    """
    n, h, w = shot.n_frames, shot.height, shot.width
    ys, xs = np.mgrid[0:h:grid_step, 0:w:grid_step]
    grid = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    live: list[list] = []  # [start, [points]]
    done = []
    wanted = set(range(n)) if frames is None else set(frames)
    for k in range(n):
        # seed
        if k in wanted and shot.has_flow(k):
            occupied = np.zeros((len(range(0, h, grid_step)), len(range(0, w, grid_step))), bool)
            for _, pts in live:
                x, y = pts[-1]
                occupied[min(int(y // grid_step), occupied.shape[0] - 1),
                         min(int(x // grid_step), occupied.shape[1] - 1)] = True
            inside = shot.masks[k][grid[:, 1].astype(int), grid[:, 0].astype(int)]
            free = ~occupied.ravel()
            for p in grid[inside & free]:
                live.append([k, [p.copy()]])
        if not shot.has_flow(k) or not live:
            done.extend(live)
            live = []
            continue
        cur = np.array([pts[-1] for _, pts in live])
        nxt = cur + bilinear_sample(shot.flow[k], cur)
        keep = []
        for (start, pts), p in zip(live, nxt):
            ok = 0 <= p[0] <= w - 1 and 0 <= p[1] <= h - 1
            if ok and k + 1 < n:
                ok = bool(shot.masks[k + 1][int(round(p[1])), int(round(p[0]))])
            if ok:
                pts.append(p)
                if len(pts) >= traj_len:
                    done.append([start, pts])
                else:
                    keep.append([start, pts])
            else:
                done.append([start, pts])
        live = keep
    done.extend(live)
    out = []
    for start, pts in sorted(done, key=lambda sp: (sp[0], sp[1][0][1], sp[1][0][0])):
        if len(pts) >= 2:
            out.append(Trajectory(len(out), start, np.array(pts)))
    return out


def foreground_trajectories(shot: Shot, trajectories: Sequence[Trajectory] | None = None,
                            frame: int | None = None) -> list[Trajectory]:
    """Trajectories whose first point (or point at ``frame``) lies inside the mask."""
    trajectories = shot.trajectories if trajectories is None else trajectories
    out = []
    h, w = shot.height, shot.width
    for t in trajectories:
        k = t.start_frame if frame is None else frame
        if not (t.start_frame <= k <= t.end_frame):
            continue
        x, y = t.points[k - t.start_frame]
        r, c = int(round(y)), int(round(x))
        if 0 <= r < h and 0 <= c < w and shot.masks[k][r, c]:
            out.append(t)
    return out

"""Procedural datasets, ``.xyz`` text I/O and checkpoint persistence."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .core import PointCloud, center_and_scale, validate
from .errors import CheckpointShapeMismatch, ParseError, VersionMismatch
from .rng import SplitMix64, derive_seed

SHAPE_KINDS = ("sphere", "cube", "cylinder", "plane")
PART_COUNTS = {"sphere": 2, "cube": 6, "cylinder": 3, "plane": 2}


@dataclass(frozen=True)
class ShapeSpec:
    kind: str
    n_points: int
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if self.n_points < 8:
            raise ValueError("n_points must be at least 8")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


@dataclass(frozen=True)
class SceneSpec:
    n_objects: int = 4
    distance_range: tuple = (5.0, 30.0)
    ground_extent: float = 32.0
    points_per_object: int = 96
    ground_points: int = 256
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        near, far = self.distance_range
        if not 0 < near < far:
            raise ValueError("distance_range must satisfy 0 < near < far")
        if self.n_objects < 0 or self.points_per_object < 1 or self.ground_points < 1:
            raise ValueError("counts must be positive")


@dataclass(frozen=True)
class LabeledShape:
    cloud: PointCloud     # labels hold per-point part ids local to the kind
    class_label: int


@dataclass(frozen=True)
class Sample:
    """Training example. ``cloud.labels`` holds the per-point targets (global
    part ids, or 0/1 foreground for scenes); ``label`` is the shape class
    (-1 for scenes)."""

    cloud: PointCloud
    label: int = -1


def _unit_directions(rng: SplitMix64, n: int) -> np.ndarray:
    v = rng.normal(3 * n).reshape(n, 3)
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    return v / np.where(norm == 0, 1.0, norm)


def _sample_sphere(rng, n):
    pts = _unit_directions(rng, n)
    return pts, (pts[:, 2] < 0).astype(np.int64)


def _sample_cube(rng, n):
    # faces: 0:+x 1:-x 2:+y 3:-y 4:+z 5:-z, equal areas
    face = rng.integers(n, 6)
    uv = rng.uniform(2 * n, -1.0, 1.0).reshape(n, 2)
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    pts = np.empty((n, 3))
    for a in range(3):
        others = [b for b in range(3) if b != a]
        rows = axis == a
        pts[rows, a] = sign[rows]
        pts[np.ix_(rows, others)] = uv[rows]
    return pts, face


def _sample_cylinder(rng, n):
    # radius 1, height 2; parts 0: side, 1: top cap, 2: bottom cap
    side_area, cap_area = 4.0 * math.pi, math.pi
    u = rng.uniform(n) * (side_area + 2 * cap_area)
    part = np.where(u < side_area, 0, np.where(u < side_area + cap_area, 1, 2))
    theta = rng.uniform(n, 0.0, 2.0 * math.pi)
    h = rng.uniform(n, -1.0, 1.0)
    r = np.sqrt(rng.uniform(n))
    pts = np.empty((n, 3))
    side = part == 0
    pts[side] = np.stack([np.cos(theta), np.sin(theta), h], axis=1)[side]
    cap = ~side
    pts[cap, 0] = (r * np.cos(theta))[cap]
    pts[cap, 1] = (r * np.sin(theta))[cap]
    pts[cap, 2] = np.where(part[cap] == 1, 1.0, -1.0)
    return pts, part


def _sample_plane(rng, n):
    xy = rng.uniform(2 * n, -1.0, 1.0).reshape(n, 2)
    pts = np.column_stack([xy, np.zeros(n)])
    return pts, (xy[:, 0] >= 0).astype(np.int64)


_SAMPLERS = {"sphere": _sample_sphere, "cube": _sample_cube, "cylinder": _sample_cylinder, "plane": _sample_plane}


def gen_shape(spec: ShapeSpec) -> LabeledShape:
    """Uniform surface samples of a unit primitive plus isotropic Gaussian
    noise. Part labels come from the noise-free position."""
    rng = SplitMix64(spec.seed)
    pts, parts = _SAMPLERS[spec.kind](rng, spec.n_points)
    if spec.noise_sigma > 0:
        pts = pts + rng.normal(3 * spec.n_points, spec.noise_sigma).reshape(-1, 3)
    cloud = PointCloud(pts, parts)
    validate(cloud)
    return LabeledShape(cloud, SHAPE_KINDS.index(spec.kind))


def part_offsets(kinds=SHAPE_KINDS) -> dict:
    """Map class id -> list of global part ids for the given kinds."""
    out, start = {}, 0
    for c, kind in enumerate(kinds):
        out[c] = list(range(start, start + PART_COUNTS[kind]))
        start += PART_COUNTS[kind]
    return out


def make_shape_dataset(n: int, n_points: int, noise: float = 0.01, seed: int = 0, split: int = 0,
                       kinds=SHAPE_KINDS, scale_jitter: float = 0.25) -> list:
    """``n`` centered, unit-scaled shapes cycling through ``kinds``.

    Each shape gets an independent per-axis scale in
    ``[1 - scale_jitter, 1 + scale_jitter]``. Targets are global part ids
    (see :func:`part_offsets`).
    """
    offsets = part_offsets(kinds)
    samples = []
    for i in range(n):
        c = i % len(kinds)
        shape_seed = derive_seed(seed, split, i)
        shape = gen_shape(ShapeSpec(kinds[c], n_points, noise, shape_seed))
        scale = SplitMix64(derive_seed(shape_seed, 1)).uniform(3, 1.0 - scale_jitter, 1.0 + scale_jitter)
        cloud = center_and_scale(shape.cloud.with_points(shape.cloud.points * scale))
        parts = np.asarray(offsets[c])[shape.cloud.labels]
        samples.append(Sample(PointCloud(cloud.points, parts), c))
    return samples


def _box_surface(rng, n, size):
    """Points on the four sides and top of an axis-aligned box resting on
    z = 0 and centered on the origin in x, y."""
    lx, ly, lz = size
    areas = np.array([ly * lz, ly * lz, lx * lz, lx * lz, lx * ly])
    u = rng.uniform(n) * areas.sum()
    face = np.searchsorted(np.cumsum(areas), u, side="right")
    face = np.minimum(face, 4)
    a, b = rng.uniform(n), rng.uniform(n)
    pts = np.empty((n, 3))
    x = (a - 0.5) * lx
    y = (a - 0.5) * ly
    pts[:, 2] = b * lz
    for f, (px, py) in enumerate(((0.5 * lx, None), (-0.5 * lx, None), (None, 0.5 * ly), (None, -0.5 * ly))):
        rows = face == f
        if px is not None:
            pts[rows, 0] = px
            pts[rows, 1] = y[rows]
        else:
            pts[rows, 0] = x[rows]
            pts[rows, 1] = py
    top = face == 4
    pts[top, 0] = x[top]
    pts[top, 1] = (b[top] - 0.5) * ly
    pts[top, 2] = lz
    return pts


OBJECT_SIZE = (1.8, 1.6, 1.5)
MIN_OBJECT_POINTS = 8


def object_point_count(spec: SceneSpec, distance: float) -> int:
    """Points on an object at ``distance``: proportional to 1/distance with
    ``points_per_object`` at the near limit, floored at 8."""
    near = spec.distance_range[0]
    return max(MIN_OBJECT_POINTS, int(round(spec.points_per_object * near / distance)))


def gen_scene(spec: SceneSpec) -> PointCloud:
    """Ground plane (background) plus box objects (foreground) at random
    ranges and headings, with point density falling off as 1/range."""
    rng = SplitMix64(spec.seed)
    e = spec.ground_extent
    ground = np.column_stack([rng.uniform(spec.ground_points, -e, e).reshape(-1, 1),
                              rng.uniform(spec.ground_points, -e, e).reshape(-1, 1),
                              np.zeros((spec.ground_points, 1))])
    chunks = [ground]
    near, far = spec.distance_range
    for _ in range(spec.n_objects):
        dist, heading, yaw = rng.uniform(1, near, far)[0], rng.uniform(1, 0, 2 * math.pi)[0], rng.uniform(1, 0, math.pi)[0]
        box = _box_surface(rng, object_point_count(spec, dist), OBJECT_SIZE)
        c, s = math.cos(yaw), math.sin(yaw)
        box[:, :2] = box[:, :2] @ np.array([[c, s], [-s, c]])
        box[:, 0] += dist * math.cos(heading)
        box[:, 1] += dist * math.sin(heading)
        chunks.append(box)
    pts = np.concatenate(chunks)
    if spec.noise_sigma > 0:
        pts = pts + rng.normal(pts.size, spec.noise_sigma).reshape(-1, 3)
    fg = np.zeros(len(pts), dtype=bool)
    fg[spec.ground_points:] = True
    cloud = PointCloud(pts, fg.astype(np.int64), fg)
    validate(cloud)
    return cloud


def make_scene_dataset(n: int, spec: SceneSpec, seed: int = 0, split: int = 0) -> list:
    return [Sample(gen_scene(replace(spec, seed=derive_seed(seed, split, i)))) for i in range(n)]


# ------------------------------------------------------------------ .xyz files


def _fmt(x: float) -> str:
    return repr(float(x))


def save_xyz(path, pc: PointCloud) -> None:
    """One point per line: ``x y z [label] [fg]``, coordinates in shortest
    round-trip form. A cloud with a mask but no labels gets label 0 so the
    mask stays in the fifth column."""
    validate(pc)
    lines = []
    for i, p in enumerate(pc.points):
        cols = [_fmt(v) for v in p]
        if pc.labels is not None or pc.fg_mask is not None:
            cols.append(str(int(pc.labels[i])) if pc.labels is not None else "0")
        if pc.fg_mask is not None:
            cols.append("1" if pc.fg_mask[i] else "0")
        lines.append(" ".join(cols))
    Path(path).write_text("\n".join(lines) + "\n")


def load_xyz(path) -> PointCloud:
    text = Path(path).read_text()
    pts, labels, fg = [], [], []
    arity = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        cols = line.split()
        if len(cols) not in (3, 4, 5):
            raise ParseError(lineno, f"expected 3 to 5 columns, got {len(cols)}")
        if arity is not None and len(cols) != arity:
            raise ParseError(lineno, f"column count {len(cols)} differs from earlier lines ({arity})")
        arity = len(cols)
        try:
            pts.append([float(c) for c in cols[:3]])
            if arity >= 4:
                labels.append(int(cols[3]))
            if arity == 5:
                if cols[4] not in ("0", "1"):
                    raise ValueError(cols[4])
                fg.append(cols[4] == "1")
        except ValueError as exc:
            raise ParseError(lineno, f"bad number: {exc}") from None
    cloud = PointCloud(np.array(pts, dtype=np.float64).reshape(-1, 3),
                       np.array(labels) if arity and arity >= 4 else None,
                       np.array(fg) if arity == 5 else None)
    validate(cloud)
    return cloud


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = "lightpoint-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params, config: dict, meta: Optional[dict] = None) -> None:
    """Text header then little-endian float64 payload in manifest order.

    Header lines: magic, ``version N``, ``meta key value`` lines,
    ``config key = value`` lines, ``param name rows cols`` lines, ``end``.
    """
    header = [CHECKPOINT_MAGIC, f"version {CHECKPOINT_VERSION}"]
    for k, v in (meta or {}).items():
        header.append(f"meta {k} {v}")
    for k, v in config.items():
        header.append(f"config {k} = {v}")
    state = params.state() if hasattr(params, "state") else params
    for name, arr in state.items():
        rows, cols = np.asarray(arr).reshape(np.asarray(arr).shape[0], -1).shape
        header.append(f"param {name} {rows} {cols}")
    header.append("end")
    payload = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for arr in state.values())
    Path(path).write_bytes(("\n".join(header) + "\n").encode("utf-8") + payload)


@dataclass
class Checkpoint:
    version: int
    config: dict
    meta: dict
    tensors: dict   # name -> ndarray, in manifest order


def load_checkpoint(path, expected_shapes: Optional[dict] = None) -> Checkpoint:
    """Read a checkpoint. If ``expected_shapes`` (name -> shape) is given,
    every name must be present with that shape."""
    blob = Path(path).read_bytes()
    pos = 0
    lines = []
    while True:
        nl = blob.find(b"\n", pos)
        if nl < 0:
            raise ParseError(len(lines) + 1, "truncated checkpoint header")
        line = blob[pos:nl].decode("utf-8")
        pos = nl + 1
        lines.append(line)
        if line == "end":
            break
    if lines[0] != CHECKPOINT_MAGIC:
        raise ParseError(1, "not a checkpoint file")
    parts = lines[1].split()
    if len(parts) != 2 or parts[0] != "version":
        raise ParseError(2, "missing version line")
    if parts[1] != str(CHECKPOINT_VERSION):
        raise VersionMismatch(f"checkpoint version {parts[1]}, expected {CHECKPOINT_VERSION}")
    config, meta, manifest = {}, {}, []
    for lineno, line in enumerate(lines[2:-1], start=3):
        kind, _, rest = line.partition(" ")
        if kind == "meta":
            k, _, v = rest.partition(" ")
            meta[k] = v
        elif kind == "config":
            k, _, v = rest.partition(" = ")
            config[k] = v
        elif kind == "param":
            name, rows, cols = rest.split()
            manifest.append((name, (int(rows), int(cols))))
        else:
            raise ParseError(lineno, f"unknown header entry {kind!r}")
    if expected_shapes is not None:
        found = dict(manifest)
        for name, shape in expected_shapes.items():
            if name not in found:
                raise CheckpointShapeMismatch(name, tuple(shape), None)
            if tuple(found[name]) != tuple(shape):
                raise CheckpointShapeMismatch(name, tuple(shape), found[name])
        for name, shape in manifest:
            if name not in expected_shapes:
                raise CheckpointShapeMismatch(name, None, shape)
    tensors = {}
    for name, (rows, cols) in manifest:
        nbytes = rows * cols * 8
        if pos + nbytes > len(blob):
            raise CheckpointShapeMismatch(name, (rows, cols), "truncated payload")
        tensors[name] = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols).astype(np.float64)
        pos += nbytes
    if pos != len(blob):
        raise ParseError(len(lines), f"{len(blob) - pos} trailing bytes after payload")
    return Checkpoint(int(parts[1]), config, meta, tensors)

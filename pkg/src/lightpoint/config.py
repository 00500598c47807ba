"""Flat ``key = value`` run configuration.

One setting per line, dotted keys, ``#`` starts a comment::

    task = classify
    encoder.embed_dim = 36
    encoder.stages = 128:12, 64:12, 32:12
    train.epochs = 100

See README.md for the full key list.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .core import EncoderConfig
from .data import PART_COUNTS, SHAPE_KINDS, SceneSpec, make_scene_dataset, make_shape_dataset, part_offsets
from .errors import ConfigError
from .model import TASKS, ModelSpec
from .training import Schedule


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _stages(text: str) -> tuple:
    if text.lower() in ("none", ""):
        return ()
    out = []
    for chunk in text.split(","):
        m, sep, k = chunk.strip().partition(":")
        if not sep:
            raise ValueError(f"stage {chunk.strip()!r} is not sample:k")
        out.append((int(m), int(k)))
    return tuple(out)


def _kinds(text: str) -> tuple:
    kinds = tuple(t.strip() for t in text.split(",") if t.strip())
    bad = [k for k in kinds if k not in SHAPE_KINDS]
    if bad or not kinds:
        raise ValueError(f"unknown shape kinds {bad}")
    return kinds


def _ints(text: str) -> tuple:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _task(text: str) -> str:
    if text not in TASKS:
        raise ValueError(f"task must be one of {TASKS}")
    return text


def _grid(text: str) -> str:
    if text not in ("table6", "table7"):
        raise ValueError("ablate.grid must be table6 or table7")
    return text


def _agg(text: str) -> str:
    if text not in ("maa", "concat"):
        raise ValueError("encoder.aggregation must be maa or concat")
    return text


KEYS = {
    "task": _task,
    "data.n_train": int,
    "data.n_test": int,
    "data.n_points": int,
    "data.noise": float,
    "data.seed": int,
    "data.kinds": _kinds,
    "scene.n_objects": int,
    "scene.near": float,
    "scene.far": float,
    "scene.ground_extent": float,
    "scene.points_per_object": int,
    "scene.ground_points": int,
    "scene.noise": float,
    "encoder.embed_dim": int,
    "encoder.stages": _stages,
    "encoder.use_normal": _bool,
    "encoder.use_curvature": _bool,
    "encoder.aggregation": _agg,
    "encoder.use_dse": _bool,
    "dse.use_distance": _bool,
    "dse.weight": float,
    "train.epochs": int,
    "train.batch": int,
    "train.lr": float,
    "train.seed": int,
    "train.jitter": float,
    "train.stop_at": float,
    "output.dir": str,
    "ablate.grid": _grid,
    "ablate.seeds": _ints,
}


@dataclass
class RunConfig:
    task: str = "classify"
    n_train: int = 200
    n_test: int = 100
    n_points: int = 256
    noise: float = 0.01
    data_seed: int = 0
    kinds: tuple = SHAPE_KINDS
    scene: SceneSpec = field(default_factory=SceneSpec)
    encoder: Optional[EncoderConfig] = None
    use_distance: bool = True
    seg_weight: float = 1.0
    schedule: Schedule = field(default_factory=Schedule)
    seed: int = 0
    out_dir: str = "runs"
    ablate_grid: Optional[str] = None
    ablate_seeds: tuple = (0, 1, 2)

    def __post_init__(self):
        if self.encoder is None:
            self.encoder = EncoderConfig.default_for(self.min_points)
        if self.schedule.epochs < 1:
            raise ConfigError("train.epochs must be at least 1")
        if self.n_train < 0 or self.n_test < 0:
            raise ConfigError("dataset sizes must be non-negative")
        if self.schedule.batch < 1:
            raise ConfigError("train.batch must be at least 1")
        self.encoder.validate_for(self.min_points)
        self.model_spec()

    @property
    def min_points(self) -> int:
        return self.scene.ground_points if self.task == "scene_seg" else self.n_points

    @property
    def num_classes(self) -> int:
        if self.task == "classify":
            return len(self.kinds)
        if self.task == "segment":
            return sum(PART_COUNTS[k] for k in self.kinds)
        return 2

    def model_spec(self) -> ModelSpec:
        return ModelSpec(self.task, self.encoder, self.num_classes, self.use_distance, self.seg_weight)

    def class_parts(self):
        return part_offsets(self.kinds) if self.task == "segment" else None

    def datasets(self, seed_offset: int = 0) -> tuple:
        """(train, test) samples; ``seed_offset`` shifts the data seed."""
        seed = self.data_seed + seed_offset
        if self.task == "scene_seg":
            return (make_scene_dataset(self.n_train, self.scene, seed, 0),
                    make_scene_dataset(self.n_test, self.scene, seed, 1))
        return (make_shape_dataset(self.n_train, self.n_points, self.noise, seed, 0, self.kinds),
                make_shape_dataset(self.n_test, self.n_points, self.noise, seed, 1, self.kinds))

    def to_flat(self) -> dict:
        enc = self.encoder
        flat = {
            "task": self.task,
            "data.n_train": self.n_train,
            "data.n_test": self.n_test,
            "data.n_points": self.n_points,
            "data.noise": repr(self.noise),
            "data.seed": self.data_seed,
            "data.kinds": ",".join(self.kinds),
            "scene.n_objects": self.scene.n_objects,
            "scene.near": repr(float(self.scene.distance_range[0])),
            "scene.far": repr(float(self.scene.distance_range[1])),
            "scene.ground_extent": repr(float(self.scene.ground_extent)),
            "scene.points_per_object": self.scene.points_per_object,
            "scene.ground_points": self.scene.ground_points,
            "scene.noise": repr(float(self.scene.noise_sigma)),
            "encoder.embed_dim": enc.embed_dim,
            "encoder.stages": ",".join(f"{m}:{k}" for m, k in enc.stages) or "none",
            "encoder.use_normal": str(enc.use_normal).lower(),
            "encoder.use_curvature": str(enc.use_curvature).lower(),
            "encoder.aggregation": enc.aggregation,
            "encoder.use_dse": str(enc.use_dse).lower(),
            "dse.use_distance": str(self.use_distance).lower(),
            "dse.weight": repr(self.seg_weight),
            "train.epochs": self.schedule.epochs,
            "train.batch": self.schedule.batch,
            "train.lr": repr(self.schedule.lr),
            "train.seed": self.seed,
            "train.jitter": repr(self.schedule.jitter),
        }
        if self.schedule.stop_at is not None:
            flat["train.stop_at"] = repr(self.schedule.stop_at)
        return {k: str(v) for k, v in flat.items()}

    def with_encoder(self, **changes) -> "RunConfig":
        return replace(self, encoder=replace(self.encoder, **changes))


def parse_values(pairs) -> RunConfig:
    """Build a RunConfig from ``(key, text, line)`` triples."""
    values = {}
    lines = {}
    for key, text, line in pairs:
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", line)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", line)
        try:
            values[key] = KEYS[key](text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}", line) from None
        lines[key] = line

    def get(key, default):
        return values.get(key, default)

    def anchored(key_group, fn):
        try:
            return fn()
        except (ConfigError, ValueError) as exc:
            line = min((lines[k] for k in key_group if k in lines), default=None)
            raise ConfigError(str(exc), line) from None

    task = get("task", "classify")
    n_points = get("data.n_points", 256)
    scene = anchored([k for k in KEYS if k.startswith("scene.")], lambda: SceneSpec(
        n_objects=get("scene.n_objects", 4),
        distance_range=(get("scene.near", 5.0), get("scene.far", 30.0)),
        ground_extent=get("scene.ground_extent", 32.0),
        points_per_object=get("scene.points_per_object", 96),
        ground_points=get("scene.ground_points", 256),
        noise_sigma=get("scene.noise", 0.02),
    ))
    min_points = scene.ground_points if task == "scene_seg" else n_points
    enc_keys = [k for k in KEYS if k.startswith("encoder.")]

    def make_encoder():
        base = EncoderConfig.default_for(min_points)
        return EncoderConfig(
            embed_dim=get("encoder.embed_dim", base.embed_dim),
            stages=get("encoder.stages", base.stages),
            use_normal=get("encoder.use_normal", True),
            use_curvature=get("encoder.use_curvature", True),
            aggregation=get("encoder.aggregation", "maa"),
            use_dse=get("encoder.use_dse", False),
        )

    encoder = anchored(enc_keys, make_encoder)
    schedule = Schedule(
        epochs=get("train.epochs", 100),
        batch=get("train.batch", 8),
        lr=get("train.lr", 1e-3),
        jitter=get("train.jitter", 0.0),
        stop_at=get("train.stop_at", None),
    )
    return anchored(list(values), lambda: RunConfig(
        task=task,
        n_train=get("data.n_train", 200),
        n_test=get("data.n_test", 100),
        n_points=n_points,
        noise=get("data.noise", 0.01),
        data_seed=get("data.seed", 0),
        kinds=get("data.kinds", SHAPE_KINDS),
        scene=scene,
        encoder=encoder,
        use_distance=get("dse.use_distance", True),
        seg_weight=get("dse.weight", 1.0),
        schedule=schedule,
        seed=get("train.seed", 0),
        out_dir=get("output.dir", "runs"),
        ablate_grid=get("ablate.grid", None),
        ablate_seeds=get("ablate.seeds", (0, 1, 2)),
    ))


def parse_config(text: str) -> RunConfig:
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError("expected 'key = value'", lineno)
        pairs.append((key.strip(), value.strip(), lineno))
    return parse_values(pairs)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def from_flat(flat: dict) -> RunConfig:
    """Rebuild a RunConfig from a checkpoint's config echo."""
    return parse_values([(k, v, None) for k, v in flat.items()])

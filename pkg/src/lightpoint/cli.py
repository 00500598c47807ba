"""Command-line entry point: ``lightpoint <command> [flags]``.

Exit codes: 0 success, 1 runtime or check failure, 2 configuration error,
3 checkpoint incompatibility.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .config import RunConfig, from_flat, load_config
from .core import PointCloud, center_and_scale
from .data import load_checkpoint, load_xyz, save_checkpoint
from .errors import CheckpointShapeMismatch, ConfigError, LightPointError, ParseError, VersionMismatch
from .gradsuite import run_suite
from .model import PointModel
from .training import PRIMARY_METRIC, evaluate, train

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_CHECKPOINT = 0, 1, 2, 3


class CheckpointIncompatible(LightPointError):
    pass


def _out(line: str = "") -> None:
    print(line, flush=True)


def _load_run_config(path) -> RunConfig:
    if path is None:
        raise ConfigError("--config is required")
    try:
        return load_config(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None


def _tsv(header, rows) -> list:
    return ["\t".join(header)] + ["\t".join(str(v) for v in r) for r in rows]


# ------------------------------------------------------------------- train


def cmd_train(args) -> int:
    rc = _load_run_config(args.config)
    if args.seed is not None:
        rc = replace(rc, seed=args.seed)
    if rc.n_train == 0:
        raise ConfigError("data.n_train must be positive to train")
    out = Path(args.out or rc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_set, test_set = rc.datasets()
    model = PointModel(rc.model_spec(), rc.seed)
    log_lines = []

    def emit(line):
        log_lines.append(line)
        _out(line)

    report = train(model, train_set, rc.schedule, rc.seed, test_set or None, rc.class_parts(), emit)
    (out / "train.log").write_text("\n".join(log_lines) + "\n")
    model.params.load_state(report.best_state)
    meta = {"task": rc.task, "epoch": report.best_epoch, "seed": rc.seed,
            "metric": PRIMARY_METRIC[rc.task], "best_metric": repr(report.best_metric)}
    save_checkpoint(out / "best.ckpt", model.params, rc.to_flat(), meta)
    return EXIT_OK


# ------------------------------------------------------------- checkpoints


def restore(path) -> tuple:
    """``(RunConfig, PointModel)`` rebuilt from a checkpoint file."""
    try:
        ckpt = load_checkpoint(path)
        rc = from_flat(ckpt.config)
    except (ParseError, ConfigError) as exc:
        raise CheckpointIncompatible(f"unreadable checkpoint {path}: {exc}") from None
    model = PointModel(rc.model_spec(), rc.seed)
    ckpt = load_checkpoint(path, model.expected_shapes())
    model.params.load_state(ckpt.tensors)
    return rc, model


def cmd_eval(args) -> int:
    if args.checkpoint is None:
        raise ConfigError("--checkpoint is required")
    ck_rc, model = restore(args.checkpoint)
    rc = _load_run_config(args.config) if args.config else ck_rc
    if rc.task != ck_rc.task:
        raise CheckpointIncompatible(f"checkpoint was trained for {ck_rc.task}, config asks for {rc.task}")
    if rc.num_classes != ck_rc.num_classes:
        raise CheckpointIncompatible(f"checkpoint head has {ck_rc.num_classes} classes, config needs {rc.num_classes}")
    train_set, test_set = rc.datasets()
    samples = train_set if args.split == "train" else test_set
    if not samples:
        raise ConfigError(f"the {args.split} split is empty")
    metrics = evaluate(model, samples, rc.class_parts()).as_dict()
    for line in _tsv(["split"] + list(metrics), [[args.split] + [f"{v:.6f}" for v in metrics.values()]]):
        _out(line)
    return EXIT_OK


def cmd_encode(args) -> int:
    if args.checkpoint is None or args.input is None:
        raise ConfigError("--checkpoint and --input are required")
    rc, model = restore(args.checkpoint)
    cloud = load_xyz(args.input)
    pts = cloud.points if rc.task == "scene_seg" else center_and_scale(PointCloud(cloud.points)).points
    feats = model.encode(pts)
    target = Path(args.out) if args.out else Path(str(args.input) + ".features")
    lines = ["# x y z " + " ".join(f"f{i}" for i in range(feats.shape[1]))]
    for p, f in zip(cloud.points, feats):
        lines.append(" ".join(repr(float(v)) for v in np.concatenate([p, f])))
    target.write_text("\n".join(lines) + "\n")
    _out(f"wrote {len(feats)} points x {feats.shape[1]} features to {target}")
    return EXIT_OK


# ------------------------------------------------------------------ ablate

GRIDS = {
    "table6": (
        ("spatial_only", dict(use_normal=False, use_curvature=False, aggregation="maa"), {}),
        ("plus_normal", dict(use_normal=True, use_curvature=False, aggregation="maa"), {}),
        ("plus_curvature", dict(use_normal=False, use_curvature=True, aggregation="maa"), {}),
        ("all_concat", dict(use_normal=True, use_curvature=True, aggregation="concat"), {}),
        ("all_maa", dict(use_normal=True, use_curvature=True, aggregation="maa"), {}),
    ),
    "table7": (
        ("baseline", dict(use_normal=False, use_curvature=False, use_dse=False), {}),
        ("plus_mge", dict(use_dse=False), {}),
        ("dse_without_d", dict(use_dse=True), dict(use_distance=False)),
        ("dse_with_d", dict(use_dse=True), dict(use_distance=True)),
    ),
}


def grid_configs(rc: RunConfig, grid: str) -> list:
    """``(row name, RunConfig)`` for every row of an ablation grid."""
    if grid not in GRIDS:
        raise ConfigError(f"unknown ablation grid {grid!r}")
    if grid == "table7" and rc.task != "scene_seg":
        raise ConfigError("the table7 grid needs task = scene_seg")
    return [(name, replace(rc.with_encoder(**enc), **top)) for name, enc, top in GRIDS[grid]]


@dataclass
class RunResult:
    row: str
    seed: int
    n_params: int
    metrics: dict
    log: list


def run_once(row: str, rc: RunConfig, seed: int) -> RunResult:
    """Train one grid cell. Data, initialization and batch order all follow
    ``seed``; metrics are the final-epoch test metrics."""
    cfg = replace(rc, seed=seed)
    train_set, test_set = cfg.datasets(seed_offset=seed)
    model = PointModel(cfg.model_spec(), seed)
    report = train(model, train_set, cfg.schedule, seed, test_set or None, cfg.class_parts())
    last = report.records[-1]
    return RunResult(row, seed, model.params.count(), last.test or last.train, report.lines())


def ablation_table(results: list) -> list:
    rows, order = {}, []
    for r in results:
        if r.row not in rows:
            order.append(r.row)
        rows.setdefault(r.row, []).append(r)
    keys = list(results[0].metrics)
    header = ["row", "runs", "params"] + [f"{k}_{s}" for k in keys for s in ("mean", "std")]
    body = []
    for name in order:
        runs = rows[name]
        vals = []
        for k in keys:
            col = np.array([r.metrics[k] for r in runs])
            vals += [f"{col.mean():.6f}", f"{col.std():.6f}"]
        body.append([name, len(runs), runs[0].n_params] + vals)
    return _tsv(header, body)


def worker_count() -> int:
    raw = os.environ.get("POINTE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"POINTE_THREADS must be an integer, got {raw!r}") from None


def run_grid(rc: RunConfig, grid: str, seeds) -> list:
    jobs = [(name, cfg, s) for name, cfg in grid_configs(rc, grid) for s in seeds]
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        return list(pool.map(lambda j: run_once(*j), jobs))


def cmd_ablate(args) -> int:
    rc = _load_run_config(args.config)
    grid = rc.ablate_grid or ("table7" if rc.task == "scene_seg" else "table6")
    seeds = rc.ablate_seeds if args.seed is None else (args.seed,)
    if not seeds:
        raise ConfigError("ablate.seeds is empty")
    lines = ablation_table(run_grid(rc, grid, seeds))
    for line in lines:
        _out(line)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablate.tsv").write_text("\n".join(lines) + "\n")
    return EXIT_OK


# --------------------------------------------------------------- gradcheck


def cmd_gradcheck(args) -> int:
    results = run_suite(seed=args.seed or 0)
    _out("case\tmax_rel_error\tstatus")
    for r in results:
        _out(f"{r.name}\t{r.max_rel_error:.3e}\t{'ok' if r.passed else 'FAIL'}")
    failed = [r for r in results if not r.passed]
    _out(f"# {len(results)} cases, {len(results) - len(failed)} passed")
    for r in failed:
        print(f"gradient check failed: {r.name} (max relative error {r.max_rel_error:.3e})", file=sys.stderr)
    return EXIT_FAIL if failed else EXIT_OK


# -------------------------------------------------------------------- info


def param_rows(model: PointModel) -> list:
    """``(name, count)`` per parameter group, module subtotals and total."""
    groups: dict = {}
    for name, t in model.params.items():
        parts = name.split(".")
        groups.setdefault(parts[0], {})
        key = ".".join(parts[:3]) if parts[0] == "mge" and parts[1] != "lift" else ".".join(parts[:2])
        groups[parts[0]][key] = groups[parts[0]].get(key, 0) + t.value.size
    rows = []
    for module, sub in groups.items():
        rows += list(sub.items())
        rows.append((module, sum(sub.values())))
    rows.append(("total", model.params.count()))
    return rows


def cmd_info(args) -> int:
    rc = _load_run_config(args.config)
    model = PointModel(rc.model_spec(), rc.seed)
    for line in _tsv(["module", "params"], param_rows(model)):
        _out(line)
    return EXIT_OK


# -------------------------------------------------------------------- main

COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "encode": cmd_encode,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "info": cmd_info,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lightpoint", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config")
        p.add_argument("--checkpoint")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        if name == "eval":
            p.add_argument("--split", choices=("train", "test"), default="test")
        if name == "encode":
            p.add_argument("--input")
    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        where = f"{args.config}: " if args.config else ""
        print(f"config error: {where}{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (VersionMismatch, CheckpointShapeMismatch, CheckpointIncompatible) as exc:
        print(f"incompatible checkpoint: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (LightPointError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())


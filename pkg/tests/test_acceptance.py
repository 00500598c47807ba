"""End-to-end acceptance checks, one per criterion.

Each test prints a single ``CRITERION n ... PASS|FAIL`` line to the terminal
and then asserts. All heavy numerics run under a single BLAS thread.
"""

import math
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from lightpoint.cli import main, param_rows, run_grid
from lightpoint.config import parse_config
from lightpoint.data import load_checkpoint, save_checkpoint
from lightpoint.dse import D_MAX, D_MIN, distance_focal_loss, focal_terms
from lightpoint.gradsuite import COMPOSITES, SUITE, run_suite
from lightpoint.model import PointModel
from lightpoint.sampling import farthest_point_sample, knn_indices
from lightpoint.surface import canonical_sign, describe_batch, sym_eigen_3x3_batch
from lightpoint.training import train
from oracles import char_poly_roots, fps_oracle, knn_oracle, random_psd, random_rotation

SEGMENT_GRID = """\
task = segment
data.n_train = 64
data.n_test = 24
data.n_points = 128
encoder.embed_dim = 16
encoder.stages = 64:12, 32:12
train.epochs = 60
ablate.grid = table6
ablate.seeds = 0, 1, 2
"""

SCENE_GRID = """\
task = scene_seg
data.n_train = 32
data.n_test = 16
encoder.embed_dim = 16
encoder.stages = 128:12, 32:12
train.epochs = 60
ablate.grid = table7
ablate.seeds = 0, 1, 2, 3, 4
"""


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n:>2} {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


@pytest.fixture(autouse=True)
def single_thread():
    with threadpool_limits(1):
        yield


def test_c01_sampling_oracles(report):
    rng = np.random.default_rng(101)
    t = time.perf_counter()
    fps_ok = knn_ok = 0
    for _ in range(200):
        n = int(rng.integers(1, 65))
        m = int(rng.integers(1, n + 1))
        pts = rng.normal(size=(n, 3))
        if rng.random() < 0.3:
            pts = np.round(pts, 1)    # force distance and coordinate ties
        fps_ok += farthest_point_sample(pts, m).tolist() == fps_oracle(pts, m)
    for _ in range(200):
        n = int(rng.integers(2, 65))
        k = int(rng.integers(1, n + 1))
        pts = rng.normal(size=(n, 3))
        if rng.random() < 0.3:
            pts = np.round(pts, 1)
        centers = np.arange(n)
        got = knn_indices(pts, centers, k)
        knn_ok += all(got[c].tolist() == knn_oracle(pts, c, k) for c in centers)
    elapsed = time.perf_counter() - t
    ok = fps_ok == 200 and knn_ok == 200 and elapsed < 10
    report(1, ok, f"fps {fps_ok}/200, knn {knn_ok}/200 exact, {elapsed:.1f}s (< 10s incl. oracles)")


def test_c02_eigen(report):
    rng = np.random.default_rng(202)
    mats = np.stack([random_psd(rng) for _ in range(1000)])
    t = time.perf_counter()
    vals, vecs = sym_eigen_3x3_batch(mats)
    elapsed = time.perf_counter() - t
    resid = np.abs(mats @ vecs - vecs * vals[:, None, :]).max()
    roots = np.stack([char_poly_roots(m) for m in mats])
    root_err = np.abs(vals - roots).max()
    ortho = np.abs(np.swapaxes(vecs, 1, 2) @ vecs - np.eye(3)).max()
    ok = resid <= 1e-8 and root_err <= 1e-7 and ortho <= 1e-8 and elapsed < 5
    report(2, ok, f"residual {resid:.1e}, root error {root_err:.1e}, orthonormality {ortho:.1e}, {elapsed:.2f}s")


def test_c03_gradient_suite(report, capsys):
    t = time.perf_counter()
    results = run_suite()
    code = main(["gradcheck"])
    capsys.readouterr()
    elapsed = time.perf_counter() - t
    worst = max(results, key=lambda r: r.max_rel_error)
    names = {r.name for r in results}
    ok = (all(r.passed for r in results) and code == 0 and elapsed < 60
          and set(COMPOSITES) <= names and len(names) == len(SUITE))
    report(3, ok, f"{len(results)} cases, worst {worst.name} {worst.max_rel_error:.1e} (<= 1e-4), "
                  f"gradcheck exit {code}, {elapsed:.1f}s")


def test_c04_focal_closed_forms(report):
    def loss(p, d):
        return distance_focal_loss(np.array([[p]]), [1], np.array([[d]])).item()

    errs = [abs(loss(0.5, 1.0) - 0.5 * math.log(2)),
            abs(loss(0.5, 0.5) - (-0.5 * 0.5 ** 2 * math.log(0.5)))]
    near_one = max(loss(p, d) for p in (1.0, 1 - 1e-9) for d in (D_MIN, 0.5, D_MAX))
    pt = np.linspace(0.01, 0.99, 100)
    d = np.linspace(D_MIN, D_MAX, 100)
    P, D = np.meshgrid(pt, d, indexing="ij")
    grid = focal_terms(P.reshape(-1, 1), D.reshape(-1, 1)).value.reshape(100, 100)
    mono = bool(np.all(np.diff(grid, axis=1) > 0) and np.all(np.diff(grid, axis=0) < 0))
    ok = max(errs) <= 1e-9 and abs(loss(0.5, 0.5) - 0.086643) < 5e-7 and near_one <= 1e-5 and mono
    report(4, ok, f"closed-form error {max(errs):.1e}, L(0.5,0.5)={loss(0.5, 0.5):.6f}, "
                  f"p_t->1 max {near_one:.1e}, 100x100 monotone {mono}")


def test_c05_geometry_invariance(report):
    rng = np.random.default_rng(505)
    nb = rng.normal(size=(100, 16, 3)) * rng.uniform(0.1, 3.0, size=(100, 1, 3))
    n0, c0, _ = describe_batch(nb)
    curv_err = normal_err = 0.0
    for _ in range(20):
        r = random_rotation(rng)
        t = rng.normal(size=3) * 5
        n1, c1, _ = describe_batch(nb @ r.T + t)
        curv_err = max(curv_err, np.abs(c1 - c0).max())
        normal_err = max(normal_err, np.abs(n1 - canonical_sign(n0 @ r.T)).max())
    xy = rng.normal(size=(40, 2))
    pn, pc, _ = describe_batch(np.column_stack([xy, np.full(40, 2.5)])[None])
    plane_err = np.abs(pn[0] - [0, 0, 1]).max()
    ok = curv_err <= 1e-8 and normal_err <= 1e-8 and plane_err <= 1e-8 and pc[0, 2] <= 1e-9
    report(5, ok, f"curvature {curv_err:.1e}, normal {normal_err:.1e}, plane normal {plane_err:.1e}, "
                  f"plane curvature[2] {pc[0, 2]:.1e}")


def test_c06_permutation_invariance(report):
    rng = np.random.default_rng(606)
    model = PointModel(parse_config("task = classify\n").model_spec(), 6)
    pts = rng.normal(size=(256, 3))
    ref = model.forward(pts).logits.value
    worst = max(np.abs(model.forward(pts[rng.permutation(256)]).logits.value - ref).max()
                for _ in range(50))
    report(6, worst <= 1e-6, f"max logit change over 50 permutations {worst:.1e} (<= 1e-6)")


def test_c07_classification_benchmark(report):
    lines, ok = [], True
    for seed in (0, 1, 2):
        rc = parse_config(f"task = classify\ntrain.epochs = 100\ntrain.stop_at = 0.95\n"
                          f"train.seed = {seed}\ndata.seed = {seed}\n")
        train_set, test_set = rc.datasets()
        t = time.perf_counter()
        rep = train(PointModel(rc.model_spec(), seed), train_set, rc.schedule, seed, test_set)
        elapsed = time.perf_counter() - t
        ok &= rep.best_metric >= 0.95 and elapsed < 600
        lines.append(f"seed {seed}: OA {rep.best_metric:.3f} @ epoch {rep.best_epoch}, {elapsed:.0f}s")
    report(7, ok, "; ".join(lines))


def grid_means(results, key):
    rows = {}
    for r in results:
        rows.setdefault(r.row, []).append(r.metrics[key])
    return {k: float(np.mean(v)) for k, v in rows.items()}, rows


def test_c08_geometry_ablation(report):
    rc = parse_config(SEGMENT_GRID)
    results = run_grid(rc, "table6", rc.ablate_seeds)
    means, _ = grid_means(results, "cls_miou")
    table = ", ".join(f"{k} {v:.4f}" for k, v in means.items())
    ok = len(results) == 15 and len(means) == 5 and means["all_maa"] >= means["spatial_only"]
    report(8, ok, f"cls-mIoU means: {table}")


def test_c09_dse_ablation(report):
    rc = parse_config(SCENE_GRID)
    results = run_grid(rc, "table7", rc.ablate_seeds)
    iou, per_run = grid_means(results, "fg_iou")
    recall, _ = grid_means(results, "fg_recall")
    far, _ = grid_means(results, "far_recall")
    rows = "; ".join(f"{k} IoU {iou[k]:.3f} (min {min(per_run[k]):.3f}) recall {recall[k]:.3f} "
                     f"far {far[k]:.3f}" for k in iou)
    delta = far["dse_with_d"] - far["dse_without_d"]
    ok = len(results) == 20 and all(v >= 0.80 for v in iou.values())
    report(9, ok, f"{rows}; far-tercile recall with-d minus without-d {delta:+.4f} (not gated)")


def hand_count(rc) -> int:
    enc = rc.encoder
    widths = enc.widths()
    branches = 1 + enc.use_normal + enc.use_curvature
    total = 3 * enc.embed_dim + enc.embed_dim
    for w in widths[1:]:
        total += branches * (3 * w + w + w * w + w)
        total += branches * 2 * w if enc.aggregation == "maa" else branches * w * w + w
    if rc.task == "classify":
        c_in = widths[-1]
    else:
        c_in = sum(widths)
        if enc.use_dse:
            c = c_in
            total += c * c + c + c * (c // 2) + c // 2 + (c // 2) * (c // 4) + c // 4 + c // 4 + 1
            total += (2 * 8 + 8) + (8 * 2 + 2) if rc.use_distance else 0
            c_in += c // 4
    hidden = c_in // 2
    return total + c_in * hidden + hidden + hidden * rc.num_classes + rc.num_classes


def test_c10_parameter_accounting(report, capsys, tmp_path):
    configs = {
        "classify default": "task = classify\n",
        "segment concat": "task = segment\nencoder.aggregation = concat\nencoder.use_normal = false\n",
        "scene dse": "task = scene_seg\nencoder.embed_dim = 24\nencoder.use_dse = true\n",
    }
    lines, ok = [], True
    for name, text in configs.items():
        path = tmp_path / "c.cfg"
        path.write_text(text)
        assert main(["info", "--config", str(path)]) == 0
        out = capsys.readouterr().out.strip().splitlines()
        total = int(out[-1].split("\t")[1])
        expect = hand_count(parse_config(text))
        ok &= total == expect == dict(param_rows(PointModel(parse_config(text).model_spec())))["total"]
        lines.append(f"{name} {total} (hand {expect})")
    default_total = int(lines[0].split()[2])
    ok &= default_total < 1_500_000
    report(10, ok, "; ".join(lines) + "; default < 1.5M")


def test_c11_determinism_and_persistence(report, capsys, tmp_path):
    cfg = tmp_path / "d.cfg"
    cfg.write_text("task = segment\ndata.n_train = 16\ndata.n_test = 8\ndata.n_points = 64\n"
                   "encoder.embed_dim = 8\nencoder.stages = 32:8, 16:8\ntrain.epochs = 3\n")
    codes = [main(["train", "--config", str(cfg), "--out", str(tmp_path / r)]) for r in ("a", "b")]
    capsys.readouterr()
    logs = [(tmp_path / r / "train.log").read_bytes() for r in ("a", "b")]
    rc = parse_config(cfg.read_text())
    model = PointModel(rc.model_spec(), 4)
    pts = np.random.default_rng(11).normal(size=(64, 3))
    ref = model.forward(pts).logits.value
    save_checkpoint(tmp_path / "m.ckpt", model.params, rc.to_flat(), {"task": rc.task})
    fresh = PointModel(rc.model_spec(), 5)
    fresh.params.load_state(load_checkpoint(tmp_path / "m.ckpt", fresh.expected_shapes()).tensors)
    err = np.abs(fresh.forward(pts).logits.value - ref).max()
    ok = codes == [0, 0] and logs[0] == logs[1] and err <= 1e-12
    report(11, ok, f"logs byte-identical {logs[0] == logs[1]}, reload forward error {err:.1e} (<= 1e-12)")

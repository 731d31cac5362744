"""Acceptance suite: the twelve release criteria at their stated tolerances.

Criteria 8-11 share one benchmark run per seed (session fixture).
"""

import itertools
import time

import numpy as np
import pytest

from conftest import random_camera
from pointdc import codecs
from pointdc.cli import main
from pointdc.cluster import (
    harden, kmeans_fit, lloyd_step, pool_soft_labels, soft_assign, squared_distances,
)
from pointdc.config import RunConfig
from pointdc.dataset import ground_truth
from pointdc.distill import DistillTargets, build_distill_targets, cmd_loss_and_grad
from pointdc.evaluation import evaluate_clustering, hungarian_match, linear_probe
from pointdc.featnet import PARAM_NAMES, PointFeatureNet
from pointdc.geometry import backproject, project_points, zbuffer_visibility
from pointdc.pipeline import build_scenes, probe_config, run_benchmark
from pointdc.supervoxel import SuperVoxelPartition, pool_avg, scatter_to_points
from pointdc.cloud import PointCloud

SEEDS = (0, 1, 2, 3, 4)
MIN_FULL_MIOU = 0.85
MIN_BASELINE_GAP = 0.15
MIN_PROBE_ACCURACY = 0.9


def per_pixel_min_depth(proj, camera):
    """Dense per-pixel scan: depth of every point in every pixel (inf
    elsewhere); argmin keeps the first index on ties."""
    n_pix = camera.width * camera.height
    pix = np.where(proj.valid, proj.pixel_row * camera.width + proj.pixel_col, -1)
    depth = np.where(pix[None, :] == np.arange(n_pix)[:, None], proj.depth[None, :], np.inf)
    best = np.argmin(depth, axis=1)
    winner = np.where(np.isfinite(depth[np.arange(n_pix), best]), best, -1)
    return winner.reshape(camera.height, camera.width)


def test_criterion_01_zbuffer_oracle(criterion):
    rng = np.random.default_rng(101)
    mismatches, elapsed = 0, 0.0
    for _ in range(100):
        n = int(rng.integers(1, 1001))
        cam = random_camera(rng, size=64)
        pts = rng.uniform(-1, 1, (n, 3))
        start = time.perf_counter()
        proj = project_points(pts, cam)
        winner = zbuffer_visibility(proj, cam).winner
        elapsed += time.perf_counter() - start
        mismatches += not np.array_equal(winner, per_pixel_min_depth(proj, cam))
    ok = mismatches == 0 and elapsed < 5.0
    criterion(1, ok, f"z-buffer vs per-pixel scan: {mismatches}/100 mismatches, {elapsed:.2f}s")
    assert ok


def test_criterion_02_projection_round_trip(criterion):
    rng = np.random.default_rng(102)
    start = time.perf_counter()
    worst, checked = 0.0, 0
    for _ in range(20):
        cam = random_camera(rng)
        pts = rng.uniform(-1, 1, (1000, 3))
        proj = project_points(pts, cam)
        v = proj.valid
        back = backproject(proj.u[v], proj.v[v], proj.depth[v], cam)
        worst = max(worst, float(np.max(np.abs(back - pts[v]), initial=0.0)))
        checked += int(v.sum())
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and checked > 0 and elapsed < 1.0
    criterion(2, ok, f"max round-trip error {worst:.2e} over {checked} points, {elapsed:.2f}s")
    assert ok


def _relative_error(analytic, numeric):
    scale = np.max(np.abs(numeric))
    if scale == 0:
        return float(np.max(np.abs(analytic)))
    return float(np.max(np.abs(analytic - numeric)) / scale)


def _featnet_error(rng, h=1e-6):
    hidden, k, dim = int(rng.integers(3, 7)), int(rng.integers(1, 5)), int(rng.integers(2, 5))
    net = PointFeatureNet(hidden=hidden, k=k, dim=dim, normalize_output=bool(rng.integers(2)),
                          seed=int(rng.integers(1000)))
    for p in net.params.values():
        p += rng.normal(scale=0.1, size=p.shape)
    n = int(rng.integers(4, 13))
    cloud = PointCloud(rng.uniform(-1, 1, (n, 3)), rng.uniform(0, 1, (n, 3)))
    cot = rng.normal(size=(n, dim))
    _, record = net.forward(cloud)
    grads = net.backward(record, cot)
    worst = 0.0
    for name in PARAM_NAMES:
        p = net.params[name]
        numeric = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            plus = np.sum(net.forward(cloud, record.neighbors)[0] * cot)
            p[idx] = old - h
            minus = np.sum(net.forward(cloud, record.neighbors)[0] * cot)
            p[idx] = old
            numeric[idx] = (plus - minus) / (2 * h)
        worst = max(worst, _relative_error(grads[name], numeric))
    return worst


def _cmd_error(rng, h=1e-6):
    n, m, d = int(rng.integers(5, 30)), int(rng.integers(1, 5)), int(rng.integers(1, 5))
    part = SuperVoxelPartition(rng.permutation(np.arange(n) % m), m)
    mask = rng.random(m) < 0.7
    mask[0] = True
    targets = DistillTargets(rng.normal(size=(m, d)), mask)
    x = rng.normal(size=(n, d))
    _, grad = cmd_loss_and_grad(x, part, targets)
    numeric = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        numeric[idx] = (cmd_loss_and_grad(xp, part, targets)[0]
                        - cmd_loss_and_grad(xm, part, targets)[0]) / (2 * h)
    return _relative_error(grad, numeric)


def test_criterion_03_gradients(criterion):
    rng = np.random.default_rng(103)
    start = time.perf_counter()
    net_err = max(_featnet_error(rng) for _ in range(20))
    cmd_err = max(_cmd_error(rng) for _ in range(20))
    elapsed = time.perf_counter() - start
    ok = net_err < 1e-5 and cmd_err < 1e-5 and elapsed < 30
    criterion(3, ok, f"max relative error: network {net_err:.2e}, distillation loss "
                     f"{cmd_err:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_04_kmeans_contract(criterion):
    rng = np.random.default_rng(104)
    start = time.perf_counter()
    increases = not_fixed = 0
    for i in range(50):
        n, d, c = int(rng.integers(20, 300)), int(rng.integers(2, 10)), int(rng.integers(2, 8))
        x = rng.normal(size=(n, d)) * rng.uniform(0.1, 10)
        sphere = bool(i % 2)
        fit = kmeans_fit(x, c, seed=i, sphere=sphere, max_iters=1000)
        increases += int(np.any(np.diff(fit.objective_trace) > 0))
        _, labels = lloyd_step(x, fit.centroids, sphere=sphere)
        not_fixed += int(not np.array_equal(labels, fit.labels))
    x = rng.normal(size=(500, 6))
    mean_err = float(np.max(np.abs(kmeans_fit(x, 1, sphere=False).centroids[0] - x.mean(0))))
    elapsed = time.perf_counter() - start
    ok = increases == 0 and not_fixed == 0 and mean_err <= 1e-12 and elapsed < 10
    criterion(4, ok, f"{increases} objective increases, {not_fixed} non-fixed points over 50 "
                     f"datasets; C=1 mean error {mean_err:.1e}; {elapsed:.1f}s")
    assert ok


def test_criterion_05_assignment_pooling_algebra(criterion):
    rng = np.random.default_rng(105)
    start = time.perf_counter()
    row_err = pool_err = simplex_err = 0.0
    argmax_mismatch = 0
    for _ in range(50):
        n, d, c, m = 200, int(rng.integers(2, 10)), int(rng.integers(2, 8)), int(rng.integers(1, 40))
        feats, mu = rng.normal(size=(n, d)), rng.normal(size=(c, d))
        row_err = max(row_err, float(np.max(np.abs(soft_assign(feats, mu, 1.0).sum(1) - 1))))
        unit_f = feats / np.linalg.norm(feats, axis=1, keepdims=True)
        unit_mu = mu / np.linalg.norm(mu, axis=1, keepdims=True)
        cold = np.argmax(soft_assign(feats, mu, 1e-3), axis=1)
        argmax_mismatch += int(np.sum(cold != np.argmin(squared_distances(unit_f, unit_mu), 1)))
        part = SuperVoxelPartition(rng.permutation(np.arange(n) % m), m)
        v = rng.normal(size=(m, d))
        pool_err = max(pool_err, float(np.max(np.abs(pool_avg(scatter_to_points(v, part), part) - v))))
        pooled = pool_soft_labels(rng.dirichlet(np.ones(c), n), part)
        simplex_err = max(simplex_err, float(np.max(np.abs(pooled.sum(1) - 1))),
                          float(-min(pooled.min(), 0.0)))
        assert np.all(harden(pooled).sum(1) == 1)
    elapsed = time.perf_counter() - start
    ok = (row_err <= 1e-12 and argmax_mismatch == 0 and pool_err <= 1e-12
          and simplex_err <= 1e-12 and elapsed < 5)
    criterion(5, ok, f"row-sum err {row_err:.1e}, cold-argmax mismatches {argmax_mismatch}, "
                     f"pool(scatter) err {pool_err:.1e}, simplex err {simplex_err:.1e}, "
                     f"{elapsed:.2f}s")
    assert ok


def test_criterion_06_hungarian_optimality(criterion):
    rng = np.random.default_rng(106)
    perms = {n: np.array(list(itertools.permutations(range(n)))) for n in range(1, 8)}
    start = time.perf_counter()
    failures = 0
    for trial in range(200):
        n = 1 + trial % 7
        conf = rng.integers(0, 1000, (n, n))
        best = conf[np.arange(n), perms[n]].sum(axis=1).max()
        perm = hungarian_match(conf)
        failures += int(conf[np.arange(n), perm].sum() != best
                        or sorted(perm.tolist()) != list(range(n)))
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 5
    criterion(6, ok, f"{failures}/200 trials differ from exhaustive search, {elapsed:.2f}s")
    assert ok


def test_criterion_07_noiseless_ceiling(criterion):
    start = time.perf_counter()
    cfg = RunConfig(oracle_noise=0.0, oracle_nuisance=0.0)
    scenes, _ = build_scenes(cfg)
    targets = [build_distill_targets(s.cloud, s.views, s.partition) for s in scenes]
    feats = np.vstack([t.features[t.voxel_mask] for t in targets])
    fit = kmeans_fit(feats, cfg.n_classes, seed=cfg.seed, n_init=cfg.kmeans_n_init)
    preds, gts, offset = [], [], 0
    for s, t in zip(scenes, targets):
        voxel_label = np.full(s.partition.n_voxels, -1)
        k = int(t.voxel_mask.sum())
        voxel_label[t.voxel_mask] = fit.labels[offset:offset + k]
        offset += k
        point_label = scatter_to_points(voxel_label, s.partition)
        seen = point_label >= 0  # points in voxels no camera sees carry no feature
        preds.append(point_label[seen])
        gts.append(s.cloud.labels[seen])
    pred, gt = np.concatenate(preds), np.concatenate(gts)
    miou = evaluate_clustering(pred, gt, cfg.n_classes).miou
    elapsed = time.perf_counter() - start
    ok = miou == 1.0 and elapsed < 120
    criterion(7, ok, f"noiseless mIoU {miou:.6f} on {len(pred)}/{len(ground_truth(scenes))} "
                     f"points in visible super-voxels, {elapsed:.1f}s")
    assert ok


@pytest.fixture(scope="session")
def benchmark_runs():
    return [run_benchmark(RunConfig(seed=s)) for s in SEEDS]


def _fmt(values):
    return "[" + ", ".join(f"{v:.3f}" for v in values) + "]"


def test_criterion_08_end_to_end(criterion, benchmark_runs):
    full = [r.full_miou for r in benchmark_runs]
    passing = sum(m >= MIN_FULL_MIOU for m in full)
    seconds = sum(r.seconds["generate"] + r.seconds["cmd"] + r.seconds["svc"]
                  for r in benchmark_runs)
    ok = passing >= 4 and seconds < 600
    criterion(8, ok, f"CMD+SVC mIoU per seed {_fmt(full)}; {passing}/5 >= {MIN_FULL_MIOU}; "
                     f"{seconds:.0f}s")
    assert ok


def test_criterion_09_ablation_order(criterion, benchmark_runs):
    base = float(np.mean([r.baseline_mious[-1] for r in benchmark_runs]))
    cmd_only = float(np.mean([r.cmd_only_miou for r in benchmark_runs]))
    full = float(np.mean([r.full_miou for r in benchmark_runs]))
    seconds = sum(sum(r.seconds.values()) for r in benchmark_runs)
    ok = base < cmd_only < full and full - base >= MIN_BASELINE_GAP and seconds < 1800
    criterion(9, ok, f"mean mIoU baseline {base:.3f} < CMD-only {cmd_only:.3f} < full {full:.3f}; "
                     f"gap {100 * (full - base):.1f} points; {seconds:.0f}s")
    assert ok


def test_criterion_10_iteration_monotonicity(criterion, benchmark_runs):
    curves = [r.svc_mious for r in benchmark_runs]
    monotone = sum(all(b >= a for a, b in zip(c, c[1:])) for c in curves)
    ok = monotone >= 4
    criterion(10, ok, f"non-decreasing over iterations in {monotone}/5 seeds: "
                      + "; ".join(_fmt(c) for c in curves))
    assert ok


def test_criterion_11_linear_probe(criterion, benchmark_runs):
    accuracies = [r.probe_accuracy for r in benchmark_runs]
    cfg = RunConfig()
    rng = np.random.default_rng(111)
    gt = ground_truth(build_scenes(cfg)[0])
    per_class = np.bincount(gt).min()
    balanced = np.concatenate([rng.choice(np.flatnonzero(gt == c), per_class, replace=False)
                               for c in range(cfg.n_classes)])
    noise = rng.normal(size=(len(balanced), cfg.feature_dim))
    _, control = linear_probe(noise, gt[balanced], probe_config(cfg), cfg.n_classes)
    chance = 1.0 / cfg.n_classes
    ok = min(accuracies) >= MIN_PROBE_ACCURACY and abs(control.accuracy - chance) <= 0.1
    criterion(11, ok, f"probe accuracy per seed {_fmt(accuracies)}; random-feature control "
                      f"{control.accuracy:.3f} vs chance {chance:.3f}")
    assert ok


def test_criterion_12_determinism(criterion, tmp_path):
    def scripted(root):
        steps = (["synth", "--out", root / "data"],
                 ["partition", "--data", root / "data", "--out", root / "part"],
                 ["distill", "--data", root / "data", "--partitions", root / "part",
                  "--out", root / "cmd"],
                 ["svc", "--data", root / "data", "--partitions", root / "part",
                  "--checkpoint", root / "cmd" / "checkpoint.pdck", "--out", root / "svc"],
                 ["eval", "--data", root / "data", "--partitions", root / "part",
                  "--checkpoint", root / "svc" / "checkpoint.pdck", "--out", root / "eval"])
        for argv in steps:
            assert main([str(a) for a in argv[:1] + ["--seed", "7"] + argv[1:]]) == 0
        return (root / "eval" / "metrics.txt").read_bytes()

    first, second = scripted(tmp_path / "a"), scripted(tmp_path / "b")
    report = codecs.decode_report(first)
    ok = first == second
    criterion(12, ok, f"two seeded scripted runs: metrics files identical={ok} "
                      f"({len(first)} bytes, mIoU {report.miou:.3f})")
    assert ok

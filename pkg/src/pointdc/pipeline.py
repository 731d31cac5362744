"""Glue between a :class:`RunConfig` and the stage functions.

The CLI, the estimators and the acceptance suite all go through here, so a
default ``RunConfig`` always means the same benchmark.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .codecs import Checkpoint
from .config import RunConfig
from .dataset import ground_truth
from .distill import build_distill_targets, run_cmd
from .evaluation import MetricsReport, ProbeConfig, evaluate_clustering, linear_probe
from .featnet import PointFeatureNet, TransformSpec, knn_indices
from .svc import (
    BaselineConfig, LinearHead, SvcConfig, SvcResult, predict_labels, run_baseline_deepcluster,
    run_svc,
)
from .synth import PartitionSettings, SceneSpec, benchmark_spec, make_dataset


def scene_spec(cfg: RunConfig) -> SceneSpec:
    return benchmark_spec(cfg.n_classes, cfg.density_ratio, points_per_scene=cfg.points_per_scene,
                          n_cameras=cfg.n_cameras, image_size=cfg.image_size,
                          color_noise=cfg.color_noise,
                          instance_color_shift=cfg.instance_color_shift)


def partition_settings(cfg: RunConfig) -> PartitionSettings:
    return PartitionSettings(cfg.partition_strategy, cfg.cell_size, cfg.normal_deg, cfg.color_tol,
                             cfg.min_size, cfg.split_cells)


def transform_spec(cfg: RunConfig):
    if not cfg.transforms:
        return None
    return TransformSpec(cfg.color_jitter, cfg.coord_noise, cfg.rotation_range, cfg.mirror_prob)


def svc_config(cfg: RunConfig, **overrides) -> SvcConfig:
    values = dict(n_clusters=cfg.n_clusters, iterations=cfg.svc_iterations,
                  epochs_per_iteration=cfg.svc_epochs, tau=cfg.tau, lr=cfg.svc_lr,
                  transform=transform_spec(cfg), seed=cfg.seed, sphere=cfg.sphere,
                  use_nonparametric=cfg.nonparametric, use_label_pooling=cfg.label_pooling,
                  kmeans_max_iters=cfg.kmeans_max_iters, kmeans_n_init=cfg.kmeans_n_init)
    values.update(overrides)
    return SvcConfig(**values)


def baseline_config(cfg: RunConfig) -> BaselineConfig:
    return BaselineConfig(cfg.n_clusters, cfg.baseline_iterations, cfg.baseline_epochs,
                          cfg.baseline_lr, cfg.seed, cfg.sphere, cfg.kmeans_max_iters,
                          cfg.kmeans_n_init)


def probe_config(cfg: RunConfig) -> ProbeConfig:
    return ProbeConfig(cfg.probe_epochs, cfg.probe_lr, cfg.probe_batch_size, cfg.probe_holdout,
                       cfg.seed)


def new_network(cfg: RunConfig) -> PointFeatureNet:
    return PointFeatureNet(hidden=cfg.hidden, k=cfg.knn, dim=cfg.feature_dim, seed=cfg.seed)


def build_scenes(cfg: RunConfig):
    """In-memory counterpart of the ``synth`` subcommand."""
    return make_dataset(scene_spec(cfg), cfg.n_scenes, cfg.seed, cfg.feature_dim,
                        cfg.oracle_noise, cfg.oracle_nuisance, partition_settings(cfg))


def distill(net: PointFeatureNet, scenes, cfg: RunConfig) -> list:
    targets = [build_distill_targets(s.cloud, s.views, s.partition) for s in scenes]
    return run_cmd(net, scenes, targets, epochs=cfg.cmd_epochs, lr=cfg.cmd_lr, seed=cfg.seed)


def head_from_checkpoint(ckpt: Checkpoint):
    if "head.weight" not in ckpt.tensors:
        return None
    weight = ckpt.tensors["head.weight"]
    head = LinearHead(weight.shape[0], weight.shape[1])
    head.params = {"weight": weight, "bias": ckpt.tensors["head.bias"]}
    return head


def checkpoint_from(net: PointFeatureNet, result: SvcResult | None = None) -> Checkpoint:
    if result is None:
        return Checkpoint(net)
    tensors = {}
    if result.head is not None:
        tensors = {f"head.{k}": v for k, v in result.head.params.items()}
    return Checkpoint(net, result.centroids, tensors)


def predict(net: PointFeatureNet, scenes, centroids=None, head=None) -> np.ndarray:
    return np.concatenate([predict_labels(net, s.cloud, centroids, head) for s in scenes])


def point_features(net: PointFeatureNet, scenes) -> np.ndarray:
    return np.vstack([net.forward(s.cloud)[0] for s in scenes])


def evaluate_checkpoint(ckpt: Checkpoint, scenes, n_classes: int) -> MetricsReport:
    """Hungarian-matched metrics of a checkpoint's cluster predictions."""
    head = head_from_checkpoint(ckpt)
    if ckpt.centroids is None and head is None:
        raise ValueError("checkpoint holds no centroids or head to predict with")
    pred = predict(ckpt.net, scenes, ckpt.centroids, head)
    n_pred = len(ckpt.centroids) if head is None else head.params["weight"].shape[1]
    report = evaluate_clustering(pred, ground_truth(scenes), max(n_pred, n_classes))
    report.extra.update(n_clusters=n_pred, n_scenes=len(scenes))
    return report


def probe(net: PointFeatureNet, scenes, cfg: RunConfig, n_classes: int):
    return linear_probe(point_features(net, scenes), ground_truth(scenes), probe_config(cfg),
                        n_classes)


@dataclass
class BenchmarkRun:
    """Everything the acceptance suite measures for one seed."""

    seed: int
    cmd_trace: list
    cmd_only_miou: float
    svc_mious: list
    full_miou: float
    baseline_mious: list = field(default_factory=list)
    probe_accuracy: float = float("nan")
    report: MetricsReport | None = None
    seconds: dict = field(default_factory=dict)


def run_benchmark(cfg: RunConfig, with_baseline=True, with_probe=True) -> BenchmarkRun:
    """CMD, then SVC; optionally the point-level baseline from the same
    initialization and a linear probe on the distilled features.

    CMD-only is scored by clustering the distilled features (one K-means
    pass over super-voxel features, no training), exactly as iteration 0 of
    SVC would see them.
    """
    seconds = {}
    clock = time.perf_counter()

    def lap(name):
        nonlocal clock
        now = time.perf_counter()
        seconds[name] = now - clock
        clock = now

    scenes, _ = build_scenes(cfg)
    gt = ground_truth(scenes)
    n_classes = cfg.n_classes
    neighbors = [knn_indices(s.cloud.xyz, cfg.knn) for s in scenes]

    def miou(net, centroids, head):
        pred = np.concatenate([predict_labels(net, s.cloud, centroids, head, nb)
                               for s, nb in zip(scenes, neighbors)])
        return evaluate_clustering(pred, gt, max(cfg.n_clusters, n_classes)).miou

    lap("generate")
    net = new_network(cfg)
    initial = net.copy()
    trace = distill(net, scenes, cfg)
    lap("cmd")
    probe_acc = float("nan")
    if with_probe:
        probe_acc = probe(net, scenes, cfg, n_classes)[1].accuracy
    lap("probe")
    cmd_only = run_svc(net.copy(), scenes, svc_config(cfg, iterations=1, epochs_per_iteration=0),
                       monitor=lambda it, n, c, h: miou(n, c, h))
    lap("cmd_only")
    result = run_svc(net, scenes, svc_config(cfg), monitor=lambda it, n, c, h: miou(n, c, h))
    report = evaluate_checkpoint(checkpoint_from(net, result), scenes, n_classes)
    lap("svc")
    baseline = []
    if with_baseline:
        b = run_baseline_deepcluster(initial, scenes, baseline_config(cfg),
                                     monitor=lambda it, n, c, h: miou(n, c, h))
        baseline = [r.monitor for r in b.iterations]
    lap("baseline")
    svc_mious = [r.monitor for r in result.iterations]
    return BenchmarkRun(cfg.seed, trace, cmd_only.iterations[0].monitor, svc_mious,
                        svc_mious[-1], baseline, probe_acc, report, seconds)

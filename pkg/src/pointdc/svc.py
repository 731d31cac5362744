"""Super-voxel clustering: alternate K-means over pooled super-voxel
features with pseudo-label training of the point network.

Also hosts the point-level learning-by-clustering baseline (K-means over
all points, cross-entropy through a learnable linear head).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .cluster import (
    harden, kmeans_fit, pool_soft_labels, soft_assign, squared_distances,
)
from .errors import PipelineError
from .featnet import (
    Adam, PointFeatureNet, TransformSpec, adam_step, knn_indices, normalize_rows,
    normalize_rows_backward, transform_equivariant, transform_invariant,
)
from .supervoxel import pool_avg, scatter_to_points

log = logging.getLogger(__name__)


@dataclass
class SvcConfig:
    n_clusters: int = 5
    iterations: int = 3
    epochs_per_iteration: int = 5
    tau: float = 1.0
    lr: float = 1e-3
    transform: Optional[TransformSpec] = field(default_factory=TransformSpec)
    seed: int = 0
    sphere: bool = True
    use_nonparametric: bool = True
    use_label_pooling: bool = True
    kmeans_max_iters: int = 100
    kmeans_n_init: int = 10

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.epochs_per_iteration < 0:
            raise ValueError("epochs_per_iteration must be non-negative")
        if not self.tau > 0:
            raise ValueError("tau must be positive")


class LinearHead:
    """Learnable D -> C classifier used when the non-parametric classifier
    is switched off, and by the baseline."""

    def __init__(self, dim, n_classes, seed=0):
        rng = np.random.default_rng(seed)
        bound = np.sqrt(3.0 / dim)
        self.params = {"weight": rng.uniform(-bound, bound, (dim, n_classes)),
                       "bias": np.zeros(n_classes)}

    def __call__(self, feats):
        return feats @ self.params["weight"] + self.params["bias"]

    def backward(self, feats, grad_logits):
        grads = {"weight": feats.T @ grad_logits, "bias": grad_logits.sum(axis=0)}
        return grad_logits @ self.params["weight"].T, grads


@dataclass
class IterationReport:
    iteration: int
    kmeans_objective: float
    kmeans_iterations: int
    losses: list
    monitor: object = None

    @property
    def mean_loss(self) -> float:
        return float(np.mean(self.losses)) if self.losses else float("nan")


@dataclass
class SvcResult:
    centroids: np.ndarray
    iterations: list
    head: Optional[LinearHead] = None


def cross_entropy(logits, target_onehot):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = len(logits)
    loss = float(-(target_onehot * log_p).sum() / n)
    return loss, (np.exp(log_p) - target_onehot) / n


def centroid_logits(feats, centroids, tau):
    """Cosine similarity to every centroid divided by ``tau``; returns the
    logits and a closure mapping logit gradients back to ``feats``."""
    unit, norms = normalize_rows(feats)
    mu, _ = normalize_rows(centroids)
    logits = unit @ mu.T / tau

    def backward(grad_logits):
        return normalize_rows_backward(unit, norms, grad_logits @ mu / tau)

    return logits, backward


def pooled_features(net, scenes, neighbors=None):
    """Dataset-wide concatenation of per-scene super-voxel mean features."""
    rows = []
    for i, scene in enumerate(scenes):
        feats, _ = net.forward(scene.cloud, None if neighbors is None else neighbors[i])
        rows.append(pool_avg(feats, scene.partition))
    return np.vstack(rows)


def pseudo_labels(feats, part, centroids, config: SvcConfig):
    """Per-point one-hot targets from the current features."""
    if config.use_nonparametric:
        soft = soft_assign(feats, centroids, config.tau)
    else:
        soft = harden(-squared_distances(feats, centroids))
    if config.use_label_pooling:
        return scatter_to_points(harden(pool_soft_labels(soft, part)), part)
    return harden(soft)


def svc_epoch(net: PointFeatureNet, scenes, centroids, config: SvcConfig, optimizer: Adam,
              rng, head: LinearHead | None = None, head_optimizer: Adam | None = None,
              neighbors=None) -> float:
    """One pass over ``scenes`` with centroids frozen. Returns the mean loss."""
    if centroids is None:
        raise ValueError("centroids must be fitted before an SVC epoch")
    if not config.use_nonparametric and head is None:
        raise ValueError("a linear head is required when the non-parametric classifier is off")
    losses = []
    for i in rng.permutation(len(scenes)):
        scene = scenes[i]
        feats, _ = net.forward(scene.cloud, None if neighbors is None else neighbors[i])
        target = pseudo_labels(feats, scene.partition, centroids, config)
        cloud = scene.cloud
        if config.transform is not None:
            cloud = transform_invariant(cloud, config.transform, rng)
            cloud, _ = transform_equivariant(cloud, config.transform, rng)
        out, record = net.forward(cloud)
        if config.use_nonparametric:
            logits, logits_backward = centroid_logits(out, centroids, config.tau)
            loss, grad_logits = cross_entropy(logits, target)
            grad_out = logits_backward(grad_logits)
        else:
            loss, grad_logits = cross_entropy(head(out), target)
            grad_out, head_grads = head.backward(out, grad_logits)
            head_optimizer.step(head.params, head_grads)
        adam_step(net, net.backward(record, grad_out), optimizer)
        losses.append(loss)
    return float(np.mean(losses))


def run_svc(net: PointFeatureNet, scenes, config: SvcConfig,
            monitor: Callable | None = None) -> SvcResult:
    """Outer E-M loop. ``monitor(iteration, net, centroids, head)`` is called
    after each iteration's training; its return value lands in the report."""
    scenes = list(scenes)
    rng = np.random.default_rng(config.seed)
    opt = Adam(config.lr)
    head = head_opt = None
    if not config.use_nonparametric:
        head = LinearHead(net.dim, config.n_clusters, seed=config.seed)
        head_opt = Adam(config.lr)
    neighbors = [knn_indices(s.cloud.xyz, net.k) for s in scenes]
    centroids, reports = None, []
    for it in range(config.iterations):
        try:
            fit = kmeans_fit(pooled_features(net, scenes, neighbors), config.n_clusters,
                             config.kmeans_max_iters, seed=config.seed + it,
                             warm_start=centroids, sphere=config.sphere,
                             n_init=config.kmeans_n_init)
            centroids = fit.centroids
            losses = [svc_epoch(net, scenes, centroids, config, opt, rng, head, head_opt, neighbors)
                      for _ in range(config.epochs_per_iteration)]
        except (ValueError, FloatingPointError) as exc:
            raise PipelineError(f"svc iteration {it}: {exc}") from exc
        report = IterationReport(it, fit.objective, len(fit.objective_trace), losses)
        if monitor is not None:
            report.monitor = monitor(it, net, centroids, head)
        log.info("svc iteration %d objective %.4f loss %.4f", it, fit.objective, report.mean_loss)
        reports.append(report)
    return SvcResult(centroids, reports, head)


@dataclass
class BaselineConfig:
    n_clusters: int = 5
    iterations: int = 3
    epochs_per_iteration: int = 5
    lr: float = 1e-3
    seed: int = 0
    sphere: bool = True
    kmeans_max_iters: int = 100
    kmeans_n_init: int = 10


def run_baseline_deepcluster(net: PointFeatureNet, scenes, config: BaselineConfig,
                             head: LinearHead | None = None, monitor: Callable | None = None):
    """Point-level K-means over every point of every scene, then
    cross-entropy training of head(net(.)) on those pseudo-labels."""
    scenes = list(scenes)
    rng = np.random.default_rng(config.seed)
    head = head or LinearHead(net.dim, config.n_clusters, seed=config.seed)
    opt, head_opt = Adam(config.lr), Adam(config.lr)
    neighbors = [knn_indices(s.cloud.xyz, net.k) for s in scenes]
    sizes = np.cumsum([0] + [len(s.cloud) for s in scenes])
    centroids, reports = None, []
    for it in range(config.iterations):
        try:
            feats = np.vstack([net.forward(s.cloud, nb)[0] for s, nb in zip(scenes, neighbors)])
            fit = kmeans_fit(feats, config.n_clusters, config.kmeans_max_iters,
                             seed=config.seed + it, warm_start=centroids, sphere=config.sphere,
                             n_init=config.kmeans_n_init)
            centroids = fit.centroids
            targets = np.eye(config.n_clusters)[fit.labels]
            losses = []
            for _ in range(config.epochs_per_iteration):
                epoch = []
                for i in rng.permutation(len(scenes)):
                    out, record = net.forward(scenes[i].cloud, neighbors[i])
                    loss, grad_logits = cross_entropy(head(out), targets[sizes[i]:sizes[i + 1]])
                    grad_out, head_grads = head.backward(out, grad_logits)
                    head_opt.step(head.params, head_grads)
                    adam_step(net, net.backward(record, grad_out), opt)
                    epoch.append(loss)
                losses.append(float(np.mean(epoch)))
        except (ValueError, FloatingPointError) as exc:
            raise PipelineError(f"baseline iteration {it}: {exc}") from exc
        report = IterationReport(it, fit.objective, len(fit.objective_trace), losses)
        if monitor is not None:
            report.monitor = monitor(it, net, centroids, head)
        reports.append(report)
    return SvcResult(centroids, reports, head)


def predict_labels(net: PointFeatureNet, cloud, centroids=None, head: LinearHead | None = None,
                   neighbors=None) -> np.ndarray:
    """Per-point cluster ids: head argmax if a head is given, otherwise the
    nearest centroid by cosine similarity."""
    feats, _ = net.forward(cloud, neighbors)
    if head is not None:
        return np.argmax(head(feats), axis=1)
    if centroids is None:
        raise ValueError("need centroids or a head to predict labels")
    logits, _ = centroid_logits(feats, centroids, 1.0)
    return np.argmax(logits, axis=1)

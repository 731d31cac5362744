"""Cross-modal distillation: train the point network to match per-super-voxel
targets aggregated from multi-view 2D features."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import PipelineError
from .featnet import Adam, PointFeatureNet, adam_step, knn_indices, normalize_rows
from .geometry import lift_view
from .supervoxel import SuperVoxelPartition, pool_avg, pool_avg_backward, pool_multiview

log = logging.getLogger(__name__)


@dataclass
class DistillTargets:
    features: np.ndarray
    voxel_mask: np.ndarray


def build_distill_targets(cloud, views, part: SuperVoxelPartition, normalize=True) -> DistillTargets:
    """Lift every view's pixel features to points, max over views per point,
    then average the visible members of each super-voxel.

    ``views`` holds ``(camera, feature_map)`` or ``(camera, feature_map,
    pixel_valid)`` tuples.
    """
    views = list(views)
    if not views:
        raise ValueError("need at least one view to build distillation targets")
    dims = {np.shape(v[1])[2] for v in views}
    if len(dims) != 1:
        raise ValueError(f"views disagree on feature dimension: {sorted(dims)}")
    lifted = [lift_view(cloud.xyz, v[0], v[1], v[2] if len(v) > 2 else None) for v in views]
    pooled, mask = pool_multiview(lifted, part)
    if normalize:
        pooled = np.where(mask[:, None], normalize_rows(pooled)[0], 0.0)
    return DistillTargets(pooled, mask)


def cmd_loss_and_grad(point_features, part: SuperVoxelPartition, targets: DistillTargets):
    """Mean squared distance between pooled point features and targets over
    visible super-voxels, with its gradient w.r.t. ``point_features``."""
    point_features = np.asarray(point_features, dtype=np.float64)
    if targets.features.shape != (part.n_voxels, point_features.shape[1]):
        raise ValueError("targets do not match the partition/feature shape")
    n_vis = int(np.count_nonzero(targets.voxel_mask))
    if n_vis == 0:
        raise ValueError("no visible super-voxel: distillation loss is undefined")
    diff = pool_avg(point_features, part) - targets.features
    diff[~targets.voxel_mask] = 0.0
    loss = float(np.sum(diff * diff) / n_vis)
    return loss, pool_avg_backward(2.0 * diff / n_vis, part)


def run_cmd(net: PointFeatureNet, scenes, targets, epochs=30, lr=1e-3,
            betas=(0.9, 0.999), eps=1e-8, seed=0):
    """Train ``net`` in place. ``targets[i]`` belongs to ``scenes[i]``.

    Returns the per-epoch mean loss trace.
    """
    scenes = list(scenes)
    if len(targets) != len(scenes):
        raise ValueError("one target set per scene is required")
    rng = np.random.default_rng(seed)
    opt = Adam(lr, betas[0], betas[1], eps)
    neighbors = [knn_indices(s.cloud.xyz, net.k) for s in scenes]
    trace = []
    for epoch in range(epochs):
        losses = []
        for i in rng.permutation(len(scenes)):
            scene = scenes[i]
            try:
                feats, record = net.forward(scene.cloud, neighbors[i])
                loss, grad = cmd_loss_and_grad(feats, scene.partition, targets[i])
                adam_step(net, net.backward(record, grad), opt)
            except (ValueError, FloatingPointError) as exc:
                raise PipelineError(f"scene {scene.name}: {exc}") from exc
            losses.append(loss)
        trace.append(float(np.mean(losses)))
        log.debug("cmd epoch %d loss %.6f", epoch, trace[-1])
    return trace

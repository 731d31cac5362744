"""Core containers: point clouds and scenes."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np


@dataclass
class PointCloud:
    """N points with XYZ coordinates (meters), RGB colors in [0, 1] and
    optional integer ground-truth labels."""

    xyz: np.ndarray
    rgb: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.xyz = np.ascontiguousarray(self.xyz, dtype=np.float64)
        self.rgb = np.ascontiguousarray(self.rgb, dtype=np.float64)
        if self.xyz.ndim != 2 or self.xyz.shape[1] != 3:
            raise ValueError(f"xyz must be (N, 3), got {self.xyz.shape}")
        if self.rgb.shape != self.xyz.shape:
            raise ValueError(f"rgb must match xyz shape {self.xyz.shape}, got {self.rgb.shape}")
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.xyz),):
                raise ValueError("labels must have one entry per point")

    def __len__(self) -> int:
        return len(self.xyz)

    def take(self, index) -> "PointCloud":
        labels = None if self.labels is None else self.labels[index]
        return PointCloud(self.xyz[index], self.rgb[index], labels)

    def with_xyz(self, xyz) -> "PointCloud":
        return replace(self, xyz=xyz)

    def with_rgb(self, rgb) -> "PointCloud":
        return replace(self, rgb=rgb)


@dataclass
class Scene:
    """One scene of a dataset: the cloud, its cameras, rendered 2D feature
    maps (one per camera), a super-voxel partition and, for generated
    scenes, the surface instance id of every point."""

    name: str
    cloud: PointCloud
    cameras: list = field(default_factory=list)
    feature_maps: list = field(default_factory=list)
    feature_valid: list = field(default_factory=list)
    partition: Optional[object] = None
    instances: Optional[np.ndarray] = None

    @property
    def views(self):
        """(camera, feature_map, validity) triples."""
        return list(zip(self.cameras, self.feature_maps, self.feature_valid))

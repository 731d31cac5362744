"""Unsupervised point cloud semantic segmentation: cross-modal feature
distillation from multi-view 2D features followed by super-voxel clustering."""

from .cloud import PointCloud, Scene
from .config import RunConfig
from .estimators import DeepClusterBaseline, LinearProbe, PointDC, SphericalKMeans
from .geometry import CameraModel, project_points, zbuffer_visibility
from .supervoxel import SuperVoxelPartition, partition

__version__ = "0.1.0"

__all__ = [
    "CameraModel", "DeepClusterBaseline", "LinearProbe", "PointCloud", "PointDC", "RunConfig",
    "Scene", "SphericalKMeans", "SuperVoxelPartition", "partition", "project_points",
    "zbuffer_visibility",
]

"""Input checks shared by the estimators."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .cloud import PointCloud, Scene


def check_features(x, min_rows=1, name="X") -> np.ndarray:
    """Finite float64 2-D array with at least ``min_rows`` rows."""
    return check_array(x, dtype=np.float64, ensure_min_samples=min_rows,
                       input_name=name, ensure_all_finite=True)


def check_labels(y, n_rows: int, name="y") -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n_rows:
        raise ValueError(f"{name} must be 1-D with {n_rows} entries, got shape {y.shape}")
    return y


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_positive_float(value, name: str, allow_zero=False) -> float:
    if isinstance(value, bool) or not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite number, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        raise ValueError(f"{name} must be {'non-negative' if allow_zero else 'positive'}, got {value!r}")
    return float(value)


def check_cloud(cloud) -> PointCloud:
    if isinstance(cloud, Scene):
        cloud = cloud.cloud
    if not isinstance(cloud, PointCloud):
        raise TypeError(f"expected a PointCloud or Scene, got {type(cloud).__name__}")
    if len(cloud) == 0:
        raise ValueError("point cloud is empty")
    if not (np.all(np.isfinite(cloud.xyz)) and np.all(np.isfinite(cloud.rgb))):
        raise ValueError("point cloud contains non-finite values")
    return cloud


def check_scenes(scenes, need_views=False, need_partition=True) -> list:
    """A non-empty list of scenes carrying what the caller needs."""
    if isinstance(scenes, Scene):
        scenes = [scenes]
    scenes = list(scenes)
    if not scenes:
        raise ValueError("need at least one scene")
    for s in scenes:
        if not isinstance(s, Scene):
            raise TypeError(f"expected Scene objects, got {type(s).__name__}")
        check_cloud(s.cloud)
        if need_partition:
            if s.partition is None:
                raise ValueError(f"scene {s.name} has no super-voxel partition")
            if s.partition.n_points != len(s.cloud):
                raise ValueError(f"partition of scene {s.name} does not match its cloud")
        if need_views and not s.cameras:
            raise ValueError(f"scene {s.name} has no views")
    return scenes


def as_clouds(x) -> list:
    """Accept a cloud, a scene, or a sequence of either."""
    if isinstance(x, (PointCloud, Scene)):
        x = [x]
    return [check_cloud(c) for c in x]

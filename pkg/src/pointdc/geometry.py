"""Pinhole projection, z-buffer visibility and pixel-to-point feature lifting.

Conventions: extrinsics are world-to-camera (``q = R @ p + t``), the camera
looks along +z with x to the right and y down, and a projection lands in
pixel ``(floor(v), floor(u))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEPTH_EPSILON = 1e-6


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        trans = np.array(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        if not np.allclose(rot @ rot.T, np.eye(3), rtol=0, atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise ValueError("rotation must have determinant +1")

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @classmethod
    def look_at(cls, eye, target, fx, fy, cx, cy, width, height, up=(0.0, 0.0, 1.0)):
        """Camera at ``eye`` looking at ``target`` with world ``up`` pointing
        toward the top of the image."""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        norm = np.linalg.norm(right)
        if norm < 1e-12:
            raise ValueError("viewing direction is parallel to the up vector")
        right /= norm
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward])
        return cls(fx, fy, cx, cy, width, height, rot, -rot @ eye)


@dataclass
class Projections:
    """Per-point projection onto one camera, in input order."""

    point_index: np.ndarray
    u: np.ndarray
    v: np.ndarray
    pixel_row: np.ndarray
    pixel_col: np.ndarray
    depth: np.ndarray
    valid: np.ndarray

    def __len__(self):
        return len(self.point_index)


@dataclass
class VisibilityMap:
    """Per-pixel z-buffer result; ``winner == -1`` marks an empty pixel."""

    winner: np.ndarray
    winner_depth: np.ndarray

    @property
    def occupied(self) -> np.ndarray:
        return self.winner >= 0


def _camera_frame(xyz, camera):
    # explicit per-column sums keep each row's result independent of its position
    rot, t = camera.rotation, camera.translation
    return (xyz[:, 0:1] * rot[:, 0] + xyz[:, 1:2] * rot[:, 1] + xyz[:, 2:3] * rot[:, 2]) + t


def project_points(xyz, camera: CameraModel) -> Projections:
    """Project world points through ``camera``. Invalid points are flagged,
    never dropped."""
    xyz = np.asarray(getattr(xyz, "xyz", xyz), dtype=np.float64)
    if xyz.ndim != 2 or xyz.shape[1] != 3 or len(xyz) == 0:
        raise ValueError("expected a nonempty (N, 3) coordinate array")
    q = _camera_frame(xyz, camera)
    depth = q[:, 2]
    in_front = depth > DEPTH_EPSILON
    safe = np.where(in_front, depth, 1.0)
    u = camera.fx * q[:, 0] / safe + camera.cx
    v = camera.fy * q[:, 1] / safe + camera.cy
    u = np.where(in_front, u, np.nan)
    v = np.where(in_front, v, np.nan)
    with np.errstate(invalid="ignore"):
        valid = in_front & (u >= 0) & (u < camera.width) & (v >= 0) & (v < camera.height)
    col = np.where(valid, np.floor(np.where(valid, u, 0.0)), -1).astype(np.int64)
    row = np.where(valid, np.floor(np.where(valid, v, 0.0)), -1).astype(np.int64)
    return Projections(np.arange(len(xyz)), u, v, row, col, depth, valid)


def backproject(u, v, depth, camera: CameraModel) -> np.ndarray:
    """Inverse of :func:`project_points` for points with known depth."""
    u, v, depth = (np.asarray(a, dtype=np.float64) for a in (u, v, depth))
    q = np.stack(
        [(u - camera.cx) / camera.fx * depth, (v - camera.cy) / camera.fy * depth, depth], axis=-1
    )
    return (q - camera.translation) @ camera.rotation


def zbuffer_visibility(proj: Projections, camera: CameraModel) -> VisibilityMap:
    """Keep, for every pixel, the valid projection with the smallest depth.
    Depth ties go to the lowest point index."""
    h, w = camera.height, camera.width
    winner = np.full(h * w, -1, dtype=np.int64)
    winner_depth = np.full(h * w, np.inf)
    idx = np.flatnonzero(proj.valid)
    if len(idx):
        pix = proj.pixel_row[idx] * w + proj.pixel_col[idx]
        order = np.lexsort((proj.point_index[idx], proj.depth[idx], pix))
        pix, idx = pix[order], idx[order]
        first = np.ones(len(pix), dtype=bool)
        first[1:] = pix[1:] != pix[:-1]
        winner[pix[first]] = proj.point_index[idx[first]]
        winner_depth[pix[first]] = proj.depth[idx[first]]
    return VisibilityMap(winner.reshape(h, w), winner_depth.reshape(h, w))


def lift_pixel_features(vis: VisibilityMap, feature_map, n_points: int, pixel_valid=None):
    """Copy each occupied pixel's feature to its winning point.

    A point that wins several pixels takes the elementwise maximum over them.
    Returns ``(features (N, D), visible (N,))``; invisible points get zeros.
    """
    feature_map = np.asarray(feature_map)
    if feature_map.ndim != 3 or feature_map.shape[:2] != vis.winner.shape:
        raise ValueError(
            f"feature map {feature_map.shape} does not match visibility map {vis.winner.shape}"
        )
    occupied = vis.occupied
    if pixel_valid is not None:
        occupied = occupied & np.asarray(pixel_valid, dtype=bool)
    d = feature_map.shape[2]
    out = np.full((n_points, d), -np.inf)
    pts = vis.winner[occupied]
    if len(pts) and (pts.max() >= n_points):
        raise ValueError("visibility map refers to more points than n_points")
    np.maximum.at(out, pts, feature_map[occupied].astype(np.float64))
    visible = np.zeros(n_points, dtype=bool)
    visible[pts] = True
    out[~visible] = 0.0
    return out, visible


def lift_view(xyz, camera: CameraModel, feature_map, pixel_valid=None):
    """project -> z-buffer -> lift for one view."""
    xyz = np.asarray(getattr(xyz, "xyz", xyz))
    vis = zbuffer_visibility(project_points(xyz, camera), camera)
    return lift_pixel_features(vis, feature_map, len(xyz), pixel_valid)

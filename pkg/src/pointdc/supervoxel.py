"""Super-voxel partitions and the pooling operators built on them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree


@dataclass
class SuperVoxelPartition:
    """Total map from point index to super-voxel id in ``[0, M)``."""

    voxel_of: np.ndarray
    n_voxels: int

    def __post_init__(self):
        self.voxel_of = np.ascontiguousarray(self.voxel_of, dtype=np.int64)
        self.n_voxels = int(self.n_voxels)
        if self.voxel_of.ndim != 1:
            raise ValueError("voxel_of must be one-dimensional")
        if len(self.voxel_of) and (self.voxel_of.min() < 0 or self.voxel_of.max() >= self.n_voxels):
            raise ValueError("voxel ids out of range")
        self.counts = np.bincount(self.voxel_of, minlength=self.n_voxels)
        if np.any(self.counts == 0):
            raise ValueError("every super-voxel needs at least one member")

    @property
    def sum_matrix(self):
        """Sparse (M, N) indicator matrix: row k sums the members of voxel k."""
        if getattr(self, "_sum_matrix", None) is None:
            n = len(self.voxel_of)
            self._sum_matrix = csr_matrix(
                (np.ones(n), (self.voxel_of, np.arange(n))), shape=(self.n_voxels, n))
        return self._sum_matrix

    @property
    def n_points(self) -> int:
        return len(self.voxel_of)

    @property
    def members(self) -> list:
        order = np.argsort(self.voxel_of, kind="stable")
        return np.split(order, np.cumsum(self.counts)[:-1])

    @classmethod
    def from_labels(cls, labels) -> "SuperVoxelPartition":
        """Densely renumber arbitrary integer labels in first-occurrence order."""
        return cls(*relabel_first_occurrence(labels))


def relabel_first_occurrence(labels):
    labels = np.asarray(labels)
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inverse.reshape(-1)], len(first)


def grid_cells(xyz, cell_size: float) -> np.ndarray:
    """Integer (x, y, z) cell index of every point."""
    if not cell_size > 0:
        raise ValueError("cell_size must be positive")
    return np.floor(np.asarray(xyz) / cell_size).astype(np.int64)


def cell_keys(cells):
    _, key = np.unique(cells, axis=0, return_inverse=True)
    return key.reshape(-1)


def estimate_normals(xyz, k: int = 16) -> np.ndarray:
    """PCA normals over ``k`` nearest neighbors, oriented toward +z."""
    xyz = np.asarray(xyz, dtype=np.float64)
    k = min(k, len(xyz))
    if k < 3:
        return np.tile([0.0, 0.0, 1.0], (len(xyz), 1))
    _, nbr = cKDTree(xyz).query(xyz, k=k)
    local = xyz[nbr] - xyz[nbr].mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", local, local)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    normals[normals[:, 2] < 0] *= -1
    return normals


def region_grow(cloud, normal_deg=10.0, color_tol=0.1, min_size=1, k=8, normal_k=16):
    """Flood-fill over the k-NN graph.

    Two neighbors are joined when their (unoriented) normals differ by less
    than ``normal_deg`` degrees and their colors by less than ``color_tol``
    in Euclidean RGB distance. Segments smaller than ``min_size`` are merged
    into the adjacent segment with the closest mean color.
    """
    xyz, rgb = cloud.xyz, cloud.rgb
    n = len(xyz)
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    k = min(k, n - 1)
    normals = estimate_normals(xyz, normal_k)
    _, nbr = cKDTree(xyz).query(xyz, k=k + 1)
    src = np.repeat(np.arange(n), k + 1)
    dst = nbr.reshape(-1)
    keep = src != dst
    src, dst = src[keep], dst[keep]
    cos = np.abs(np.einsum("ij,ij->i", normals[src], normals[dst]))
    same_normal = cos > np.cos(np.deg2rad(normal_deg))
    same_color = np.linalg.norm(rgb[src] - rgb[dst], axis=1) < color_tol
    join = same_normal & same_color
    graph = coo_matrix((np.ones(join.sum()), (src[join], dst[join])), shape=(n, n))
    _, seg = connected_components(graph, directed=False)
    seg, _ = relabel_first_occurrence(seg)
    if min_size > 1:
        seg = _merge_small(seg, rgb, src, dst, min_size)
    return seg


def _merge_small(seg, rgb, src, dst, min_size):
    seg = seg.copy()
    while True:
        counts = np.bincount(seg)
        small = np.flatnonzero((counts > 0) & (counts < min_size))
        if len(small) == 0 or np.count_nonzero(counts) == 1:
            return relabel_first_occurrence(seg)[0]
        sums = np.zeros((len(counts), 3))
        np.add.at(sums, seg, rgb)
        mean_rgb = sums / np.maximum(counts, 1)[:, None]
        s = small[0]
        cross = (seg[src] == s) & (seg[dst] != s)
        candidates = np.unique(seg[dst[cross]])
        if len(candidates) == 0:
            # isolated in the k-NN graph: fall back to the closest segment by color
            candidates = np.flatnonzero((counts > 0) & (np.arange(len(counts)) != s))
        dist = np.linalg.norm(mean_rgb[candidates] - mean_rgb[s], axis=1)
        seg[seg == s] = candidates[np.argmin(dist)]


def partition(cloud, strategy: str = "uniform_grid", *, cell_size: float = 0.25,
              normal_deg: float = 10.0, color_tol: float = 0.1, min_size: int = 1,
              split_cells: bool = False) -> SuperVoxelPartition:
    """Partition a cloud into super-voxels.

    ``uniform_grid`` groups points sharing a floor-quantized cell of edge
    ``cell_size``. ``region_grow`` groups smooth, uniformly colored surface
    patches; with ``split_cells`` each patch is further cut along the grid.
    """
    if len(cloud) == 0:
        raise ValueError("cannot partition an empty cloud")
    if strategy == "uniform_grid":
        labels = cell_keys(grid_cells(cloud.xyz, cell_size))
    elif strategy == "region_grow":
        if normal_deg < 0 or color_tol < 0 or min_size < 0:
            raise ValueError("region_grow thresholds must be non-negative")
        labels = region_grow(cloud, normal_deg, color_tol, min_size)
        if split_cells:
            cells = grid_cells(cloud.xyz, cell_size)
            labels = cell_keys(np.column_stack([labels, cells]))
    else:
        raise ValueError(f"unknown partition strategy {strategy!r}")
    return SuperVoxelPartition.from_labels(labels)


def _check_rows(values, part):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if len(values) != part.n_points:
        raise ValueError(f"expected {part.n_points} rows, got {len(values)}")
    return values


def pool_avg(values, part: SuperVoxelPartition) -> np.ndarray:
    """Mean of member rows for every super-voxel, shape (M, D)."""
    values = _check_rows(values, part)
    return (part.sum_matrix @ values) / part.counts[:, None]


def pool_avg_backward(grad_pooled, part: SuperVoxelPartition) -> np.ndarray:
    """Adjoint of :func:`pool_avg`."""
    return np.asarray(grad_pooled)[part.voxel_of] / part.counts[part.voxel_of, None]


def scatter_to_points(voxel_values, part: SuperVoxelPartition) -> np.ndarray:
    voxel_values = np.asarray(voxel_values)
    if len(voxel_values) != part.n_voxels:
        raise ValueError(f"expected {part.n_voxels} voxel rows, got {len(voxel_values)}")
    return voxel_values[part.voxel_of]


def pool_multiview(per_view, part: SuperVoxelPartition):
    """Max over views for each point, then mean over the visible members of
    each super-voxel.

    ``per_view`` is a sequence of ``(features (N, D), visible (N,))``.
    Returns ``(pooled (M, D), voxel_visible (M,))``; voxels without any
    visible member get a zero row.
    """
    per_view = list(per_view)
    if not per_view:
        raise ValueError("need at least one view")
    shape = np.shape(per_view[0][0])
    if len(shape) != 2 or shape[0] != part.n_points:
        raise ValueError(f"view features must be ({part.n_points}, D), got {shape}")
    point_max = np.full(shape, -np.inf)
    seen = np.zeros(shape[0], dtype=bool)
    for feats, mask in per_view:
        feats = np.asarray(feats, dtype=np.float64)
        mask = np.asarray(mask, dtype=bool)
        if feats.shape != shape or mask.shape != (shape[0],):
            raise ValueError("all views must share the same (N, D) shape")
        point_max[mask] = np.maximum(point_max[mask], feats[mask])
        seen |= mask
    point_max[~seen] = 0.0
    sums = part.sum_matrix @ point_max
    n_seen = np.bincount(part.voxel_of[seen], minlength=part.n_voxels)
    voxel_visible = n_seen > 0
    pooled = np.zeros_like(sums)
    pooled[voxel_visible] = sums[voxel_visible] / n_seen[voxel_visible, None]
    return pooled, voxel_visible

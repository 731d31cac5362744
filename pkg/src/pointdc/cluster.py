"""K-means over super-voxel features and the non-parametric label machinery."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .featnet import normalize_rows
from .supervoxel import SuperVoxelPartition, pool_avg


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    objective_trace: list = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


def squared_distances(x, centroids):
    diff = x[:, None, :] - centroids[None, :, :]
    return np.einsum("ncd,ncd->nc", diff, diff)


def kmeans_plus_plus(x, n_clusters, rng):
    """k-means++ seeding: each new center is drawn proportionally to the
    squared distance to the closest center already chosen."""
    centers = [x[rng.integers(len(x))]]
    closest = squared_distances(x, centers[0][None])[:, 0]
    for _ in range(1, n_clusters):
        total = closest.sum()
        if total > 0:
            pick = rng.choice(len(x), p=closest / total)
        else:
            pick = rng.integers(len(x))
        centers.append(x[pick])
        closest = np.minimum(closest, squared_distances(x, x[pick][None])[:, 0])
    return np.array(centers)


def _update(x, labels, dist, n_clusters, sphere):
    labels = labels.copy()
    counts = np.bincount(labels, minlength=n_clusters)
    empty = np.flatnonzero(counts == 0)
    if len(empty):
        # re-seed each empty cluster with the point farthest from its centroid,
        # taken only from clusters that can spare one
        own = dist[np.arange(len(x)), labels]
        for c in empty:
            donors = counts[labels] > 1
            if not donors.any():
                break
            j = int(np.argmax(np.where(donors, own, -np.inf)))
            counts[labels[j]] -= 1
            labels[j] = c
            counts[c] = 1
            own[j] = -np.inf
    sums = np.column_stack([np.bincount(labels, weights=x[:, d], minlength=n_clusters)
                            for d in range(x.shape[1])])
    centroids = sums / np.maximum(counts, 1)[:, None]
    if sphere:
        centroids = normalize_rows(centroids)[0]
    return centroids


def kmeans_fit(features, n_clusters, max_iters=100, tol=0.0, seed=0, warm_start=None,
               sphere=True, n_init=1) -> KMeansResult:
    """Lloyd iterations from k-means++ seeds (or ``warm_start``).

    The objective is the sum of squared distances to the assigned centroid.
    Iteration stops when assignments no longer change, when the objective
    drops by less than ``tol``, or after ``max_iters`` rounds. With
    ``sphere`` the centroids are renormalized to unit length after every
    update. Without a warm start, ``n_init`` seedings are run and the one
    with the lowest final objective wins (earliest on ties).
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be a 2-D array")
    if n_clusters < 1:
        raise ValueError("n_clusters must be positive")
    if len(x) < n_clusters:
        raise ValueError(f"need at least {n_clusters} rows to fit {n_clusters} clusters, got {len(x)}")
    if n_init < 1:
        raise ValueError("n_init must be positive")
    if warm_start is not None:
        centroids = np.array(warm_start, dtype=np.float64)
        if centroids.shape != (n_clusters, x.shape[1]):
            raise ValueError("warm start centroids have the wrong shape")
        return _lloyd(x, centroids, n_clusters, max_iters, tol, sphere)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        fit = _lloyd(x, kmeans_plus_plus(x, n_clusters, rng), n_clusters, max_iters, tol, sphere)
        if best is None or fit.objective < best.objective:
            best = fit
    return best


def _lloyd(x, centroids, n_clusters, max_iters, tol, sphere) -> KMeansResult:
    if sphere:
        centroids = normalize_rows(centroids)[0]
    trace, prev = [], None
    for _ in range(max(1, max_iters)):
        dist = squared_distances(x, centroids)
        labels = np.argmin(dist, axis=1)
        trace.append(float(dist[np.arange(len(x)), labels].sum()))
        if prev is not None and np.array_equal(labels, prev):
            break
        if len(trace) > 1 and trace[-2] - trace[-1] < tol:
            break
        if len(trace) >= max_iters:
            break
        centroids = _update(x, labels, dist, n_clusters, sphere)
        prev = labels
    return KMeansResult(centroids, labels, trace)


def lloyd_step(features, centroids, sphere=True):
    """One assignment + update round; used to verify fixed points."""
    x = np.asarray(features, dtype=np.float64)
    dist = squared_distances(x, centroids)
    labels = np.argmin(dist, axis=1)
    new = _update(x, labels, dist, len(centroids), sphere)
    return new, np.argmin(squared_distances(x, new), axis=1)


def cosine_similarity(features, centroids):
    f, _ = normalize_rows(np.asarray(features, dtype=np.float64))
    mu, _ = normalize_rows(np.asarray(centroids, dtype=np.float64))
    return f @ mu.T


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def soft_assign(point_features, centroids, tau=1.0):
    """Softmax over classes of cosine similarity / ``tau``."""
    if not tau > 0:
        raise ValueError("temperature must be positive")
    point_features = np.asarray(point_features, dtype=np.float64)
    if point_features.shape[1] != np.shape(centroids)[1]:
        raise ValueError("feature and centroid dimensions differ")
    zero = np.linalg.norm(point_features, axis=1) == 0
    if zero.any():
        warnings.warn(f"{zero.sum()} zero-norm feature rows get a uniform assignment",
                      RuntimeWarning, stacklevel=2)
    return softmax(cosine_similarity(point_features, centroids) / tau)


def pool_soft_labels(point_labels, part: SuperVoxelPartition):
    return pool_avg(point_labels, part)


def harden(soft) -> np.ndarray:
    """One-hot of the row argmax; ties go to the lowest class index."""
    soft = np.asarray(soft)
    out = np.zeros_like(soft, dtype=np.float64)
    out[np.arange(len(soft)), np.argmax(soft, axis=1)] = 1.0
    return out

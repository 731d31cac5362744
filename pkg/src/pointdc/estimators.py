"""scikit-learn style estimators over the pipeline pieces.

``PointDC`` and ``DeepClusterBaseline`` take a list of :class:`Scene`
objects as ``X``; ``transform`` and ``predict`` accept scenes or bare point
clouds and return rows for every point, scenes concatenated in order.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import _validation as v
from .cluster import kmeans_fit, squared_distances
from .codecs import Checkpoint
from .distill import build_distill_targets, run_cmd
from .evaluation import train_softmax_regression
from .featnet import PointFeatureNet, TransformSpec
from .svc import (
    BaselineConfig, SvcConfig, SvcResult, predict_labels, run_baseline_deepcluster, run_svc,
)


class SphericalKMeans(ClusterMixin, BaseEstimator):
    """K-means with k-means++ seeding; with ``sphere`` the centroids live
    on the unit sphere."""

    def __init__(self, n_clusters=5, max_iters=100, tol=0.0, sphere=True, n_init=10,
                 random_state=0):
        self.n_clusters = n_clusters
        self.max_iters = max_iters
        self.tol = tol
        self.sphere = sphere
        self.n_init = n_init
        self.random_state = random_state

    def fit(self, X, y=None):
        v.check_positive_int(self.n_clusters, "n_clusters")
        v.check_positive_int(self.n_init, "n_init")
        x = v.check_features(X, min_rows=self.n_clusters)
        fit = kmeans_fit(x, self.n_clusters, v.check_positive_int(self.max_iters, "max_iters"),
                         v.check_positive_float(self.tol, "tol", allow_zero=True),
                         seed=self.random_state, sphere=self.sphere, n_init=self.n_init)
        self.cluster_centers_ = fit.centroids
        self.labels_ = fit.labels
        self.inertia_ = fit.objective
        self.objective_trace_ = fit.objective_trace
        self.n_features_in_ = x.shape[1]
        return self

    def transform(self, X):
        """Squared distance to every centroid."""
        check_is_fitted(self)
        return squared_distances(self._check(X), self.cluster_centers_)

    def predict(self, X):
        return np.argmin(self.transform(X), axis=1)

    def _check(self, X):
        x = v.check_features(X)
        if x.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {x.shape[1]} features, expected {self.n_features_in_}")
        return x


class LinearProbe(ClassifierMixin, BaseEstimator):
    """Softmax regression trained with mini-batch Adam from zero weights."""

    def __init__(self, epochs=50, lr=0.05, batch_size=256, random_state=0):
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y):
        x = v.check_features(X)
        y = v.check_labels(y, len(x))
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        rng = np.random.default_rng(self.random_state)
        self.coef_, self.intercept_ = train_softmax_regression(
            x, codes, len(self.classes_), v.check_positive_int(self.epochs, "epochs", 0),
            v.check_positive_float(self.lr, "lr"),
            v.check_positive_int(self.batch_size, "batch_size"), rng)
        self.n_features_in_ = x.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self)
        x = v.check_features(X)
        if x.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {x.shape[1]} features, expected {self.n_features_in_}")
        return x @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        logits = self.decision_function(X)
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


class _PointModel(TransformerMixin, BaseEstimator):
    def _new_net(self):
        return PointFeatureNet(hidden=v.check_positive_int(self.hidden, "hidden"),
                               k=v.check_positive_int(self.knn, "knn"),
                               dim=v.check_positive_int(self.feature_dim, "feature_dim", 2),
                               seed=self.random_state)

    def transform(self, X):
        """Per-point features, shape (total points, feature_dim)."""
        check_is_fitted(self, "net_")
        return np.vstack([self.net_.forward(c)[0] for c in v.as_clouds(X)])

    def predict(self, X):
        """Cluster id of every point."""
        check_is_fitted(self, "net_")
        return np.concatenate([predict_labels(self.net_, c, self.cluster_centers_, self.head_)
                               for c in v.as_clouds(X)])

    def fit_predict(self, X, y=None):
        return self.fit(X).predict(X)

    def to_checkpoint(self) -> Checkpoint:
        check_is_fitted(self, "net_")
        tensors = {} if self.head_ is None else {f"head.{k}": p for k, p in self.head_.params.items()}
        return Checkpoint(self.net_, self.cluster_centers_, tensors)

    def _store(self, net, result: SvcResult):
        self.net_ = net
        self.cluster_centers_ = result.centroids
        self.head_ = result.head
        self.iterations_ = result.iterations
        self.n_clusters_ = len(result.centroids)


class PointDC(_PointModel):
    """Cross-modal distillation followed by super-voxel clustering.

    ``fit`` needs scenes with rendered views (distillation targets) and a
    partition. Setting ``cmd_epochs=0`` skips distillation; setting
    ``svc_epochs=0`` only clusters the distilled features.
    """

    def __init__(self, n_clusters=5, hidden=64, knn=8, feature_dim=16, cmd_epochs=30,
                 cmd_lr=1e-3, svc_iterations=3, svc_epochs=5, svc_lr=1e-3, tau=1.0,
                 sphere=True, nonparametric=True, label_pooling=True,
                 transform_spec=TransformSpec(), kmeans_n_init=10, random_state=0):
        self.n_clusters = n_clusters
        self.hidden = hidden
        self.knn = knn
        self.feature_dim = feature_dim
        self.cmd_epochs = cmd_epochs
        self.cmd_lr = cmd_lr
        self.svc_iterations = svc_iterations
        self.svc_epochs = svc_epochs
        self.svc_lr = svc_lr
        self.tau = tau
        self.sphere = sphere
        self.nonparametric = nonparametric
        self.label_pooling = label_pooling
        self.transform_spec = transform_spec
        self.kmeans_n_init = kmeans_n_init
        self.random_state = random_state

    def fit(self, X, y=None):
        cmd_epochs = v.check_positive_int(self.cmd_epochs, "cmd_epochs", 0)
        scenes = v.check_scenes(X, need_views=cmd_epochs > 0)
        net = self._new_net()
        self.cmd_trace_ = []
        if cmd_epochs:
            targets = [build_distill_targets(s.cloud, s.views, s.partition) for s in scenes]
            if targets[0].features.shape[1] != net.dim:
                raise ValueError(f"views carry {targets[0].features.shape[1]}-D features, "
                                 f"feature_dim is {net.dim}")
            self.cmd_trace_ = run_cmd(net, scenes, targets, cmd_epochs,
                                      v.check_positive_float(self.cmd_lr, "cmd_lr"),
                                      seed=self.random_state)
        config = SvcConfig(
            n_clusters=v.check_positive_int(self.n_clusters, "n_clusters"),
            iterations=v.check_positive_int(self.svc_iterations, "svc_iterations"),
            epochs_per_iteration=v.check_positive_int(self.svc_epochs, "svc_epochs", 0),
            tau=v.check_positive_float(self.tau, "tau"),
            lr=v.check_positive_float(self.svc_lr, "svc_lr"),
            transform=self.transform_spec, seed=self.random_state, sphere=self.sphere,
            use_nonparametric=self.nonparametric, use_label_pooling=self.label_pooling,
            kmeans_n_init=v.check_positive_int(self.kmeans_n_init, "kmeans_n_init"))
        self._store(net, run_svc(net, scenes, config))
        return self


class DeepClusterBaseline(_PointModel):
    """Point-level K-means pseudo-labels with a learned linear head."""

    def __init__(self, n_clusters=5, hidden=64, knn=8, feature_dim=16, iterations=3, epochs=5,
                 lr=1e-3, sphere=True, kmeans_n_init=10, random_state=0):
        self.n_clusters = n_clusters
        self.hidden = hidden
        self.knn = knn
        self.feature_dim = feature_dim
        self.iterations = iterations
        self.epochs = epochs
        self.lr = lr
        self.sphere = sphere
        self.kmeans_n_init = kmeans_n_init
        self.random_state = random_state

    def fit(self, X, y=None):
        scenes = v.check_scenes(X, need_partition=False)
        net = self._new_net()
        config = BaselineConfig(
            n_clusters=v.check_positive_int(self.n_clusters, "n_clusters"),
            iterations=v.check_positive_int(self.iterations, "iterations"),
            epochs_per_iteration=v.check_positive_int(self.epochs, "epochs", 0),
            lr=v.check_positive_float(self.lr, "lr"), seed=self.random_state,
            sphere=self.sphere,
            kmeans_n_init=v.check_positive_int(self.kmeans_n_init, "kmeans_n_init"))
        self._store(net, run_baseline_deepcluster(net, scenes, config))
        return self

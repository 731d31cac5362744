import numpy as np
import pytest
from sklearn.base import clone

from pointdc import DeepClusterBaseline, LinearProbe, PointDC, SphericalKMeans
from pointdc.codecs import decode_checkpoint, encode_checkpoint
from pointdc.config import RunConfig
from pointdc.pipeline import build_scenes


@pytest.fixture(scope="module")
def scenes():
    cfg = RunConfig(n_scenes=2, points_per_scene=512, image_size=32, n_cameras=2)
    return build_scenes(cfg)[0]


def test_clone_keeps_params():
    est = PointDC(n_clusters=3, tau=0.5, random_state=4)
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert twin is not est


def test_set_params_round_trip():
    est = SphericalKMeans().set_params(n_clusters=7, sphere=False)
    assert est.get_params()["n_clusters"] == 7 and not est.sphere


def test_kmeans_finds_separated_blobs(rng):
    centers = np.array([[5.0, 0, 0], [0, 5.0, 0], [0, 0, 5.0]])
    x = np.vstack([c + rng.normal(scale=0.1, size=(40, 3)) for c in centers])
    km = SphericalKMeans(n_clusters=3, random_state=0).fit(x)
    groups = km.labels_.reshape(3, 40)
    assert all(len(set(g)) == 1 for g in groups)
    assert len({g[0] for g in groups}) == 3
    np.testing.assert_array_equal(km.predict(x), km.labels_)
    assert km.transform(x).shape == (120, 3)


def test_kmeans_rejects_bad_input():
    with pytest.raises(ValueError):
        SphericalKMeans(n_clusters=3).fit(np.zeros((2, 4)))
    with pytest.raises(ValueError):
        SphericalKMeans(n_clusters=2).fit(np.array([[0.0, np.nan], [1, 1], [2, 2]]))
    km = SphericalKMeans(n_clusters=2).fit(np.eye(4))
    with pytest.raises(ValueError, match="features"):
        km.predict(np.eye(3))


def test_linear_probe_separable(rng):
    x = np.vstack([rng.normal(-2, 0.3, (50, 2)), rng.normal(2, 0.3, (50, 2))])
    y = np.repeat(["a", "b"], 50)
    probe = LinearProbe(epochs=100).fit(x, y)
    assert probe.score(x, y) == 1.0
    np.testing.assert_allclose(probe.predict_proba(x).sum(1), 1.0)


def test_linear_probe_needs_two_classes():
    with pytest.raises(ValueError, match="two classes"):
        LinearProbe().fit(np.eye(3), [1, 1, 1])


def test_unfitted_estimator_raises(scenes):
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        PointDC().predict(scenes)


def test_pointdc_fit_predict_shapes(scenes):
    est = PointDC(n_clusters=3, cmd_epochs=2, svc_iterations=1, svc_epochs=1,
                  kmeans_n_init=2).fit(scenes)
    n = sum(len(s.cloud) for s in scenes)
    assert est.transform(scenes).shape == (n, 16)
    labels = est.predict(scenes)
    assert labels.shape == (n,) and labels.min() >= 0 and labels.max() < 3
    assert len(est.cmd_trace_) == 2
    ckpt = decode_checkpoint(encode_checkpoint(est.to_checkpoint()))
    np.testing.assert_array_equal(ckpt.centroids, est.cluster_centers_)


def test_baseline_fit_is_seeded(scenes):
    kw = dict(n_clusters=3, iterations=1, epochs=1, kmeans_n_init=2, random_state=3)
    a = DeepClusterBaseline(**kw).fit_predict(scenes)
    b = DeepClusterBaseline(**kw).fit_predict(scenes)
    np.testing.assert_array_equal(a, b)


def test_pointdc_rejects_missing_partition(scenes):
    from dataclasses import replace
    bare = [replace(s, partition=None) for s in scenes]
    with pytest.raises(ValueError, match="partition"):
        PointDC(cmd_epochs=0).fit(bare)

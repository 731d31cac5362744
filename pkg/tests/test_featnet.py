import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_cloud
from pointdc.featnet import (
    PARAM_NAMES, Adam, NonFiniteGradientError, PointFeatureNet, TransformSpec, adam_step,
    knn_indices, linear_backward, rotate_z, transform_equivariant, transform_invariant,
)


def finite_difference_check(net, cloud, cotangent, h=1e-6):
    """Largest per-tensor relative error between the analytic gradient and
    central differences of <net(cloud), cotangent>."""
    out, record = net.forward(cloud)
    grads = net.backward(record, cotangent)
    worst = 0.0
    for name in PARAM_NAMES:
        p = net.params[name]
        numeric = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            plus = np.sum(net.forward(cloud, record.neighbors)[0] * cotangent)
            p[idx] = old - h
            minus = np.sum(net.forward(cloud, record.neighbors)[0] * cotangent)
            p[idx] = old
            numeric[idx] = (plus - minus) / (2 * h)
        scale = np.max(np.abs(numeric))
        if scale > 0:
            worst = max(worst, np.max(np.abs(grads[name] - numeric)) / scale)
        else:
            assert np.max(np.abs(grads[name])) < 1e-8
    return worst


def test_zero_network_outputs_zero(rng):
    net = PointFeatureNet(hidden=8, dim=4, normalize_output=False)
    for p in net.params.values():
        p[...] = 0
    out, _ = net.forward(random_cloud(rng, 20))
    assert np.all(out == 0)


def test_forward_unit_norm_and_finite(rng):
    net = PointFeatureNet(hidden=16, k=4, dim=8, seed=3)
    out, _ = net.forward(random_cloud(rng, 32))
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_forward_is_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    net = PointFeatureNet(hidden=8, k=4, dim=4, seed=seed % 1000)
    cloud = random_cloud(rng, 40)
    perm = rng.permutation(40)
    a, _ = net.forward(cloud)
    b, _ = net.forward(cloud.take(perm))
    np.testing.assert_allclose(b, a[perm], rtol=0, atol=1e-12)


def test_zero_cotangent_zero_gradient(rng):
    net = PointFeatureNet(hidden=8, k=3, dim=4)
    cloud = random_cloud(rng, 15)
    _, record = net.forward(cloud)
    grads = net.backward(record, np.zeros((15, 4)))
    assert all(np.all(g == 0) for g in grads.values())


def test_linear_layer_closed_form(rng):
    x = rng.normal(size=(7, 3))
    w = rng.normal(size=(3, 2))
    _, grad_w, grad_b = linear_backward(x, w, np.ones((7, 2)))
    np.testing.assert_allclose(grad_w, x.T @ np.ones((7, 2)))
    np.testing.assert_allclose(grad_b, [7.0, 7.0])


@pytest.mark.parametrize("normalize", [True, False])
def test_backward_matches_finite_differences(rng, normalize):
    net = PointFeatureNet(hidden=6, k=3, dim=3, normalize_output=normalize, seed=5)
    for p in net.params.values():
        p += rng.normal(scale=0.1, size=p.shape)  # nonzero biases
    cloud = random_cloud(rng, 12)
    assert finite_difference_check(net, cloud, rng.normal(size=(12, 3))) < 1e-5


def test_backward_rejects_stale_record(rng):
    net = PointFeatureNet(hidden=8, dim=4)
    cloud = random_cloud(rng, 10)
    _, record = net.forward(cloud)
    net.touch()
    with pytest.raises(ValueError, match="stale"):
        net.backward(record, np.zeros((10, 4)))


def test_knn_excludes_self_and_clips(rng):
    xyz = rng.normal(size=(5, 3))
    nbr = knn_indices(xyz, 10)
    assert nbr.shape == (5, 4)
    assert not np.any(nbr == np.arange(5)[:, None])
    assert knn_indices(xyz[:1], 3).tolist() == [[0]]


def test_adam_zero_gradient_keeps_parameters():
    params = {"w": np.array([1.0, -2.0])}
    Adam(0.1).step(params, {"w": np.zeros(2)})
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])


def test_adam_first_step_is_lr_times_sign():
    params = {"w": np.zeros(3)}
    Adam(lr=0.01, eps=1e-8).step(params, {"w": np.array([2.0, -0.5, 3.0])})
    # bias-corrected m/sqrt(v) = g/|g|
    np.testing.assert_allclose(params["w"], [-0.01, 0.01, -0.01], rtol=1e-6)


def test_adam_rejects_non_finite_without_partial_update():
    params = {"a": np.zeros(2), "b": np.zeros(2)}
    with pytest.raises(NonFiniteGradientError) as info:
        Adam(0.1).step(params, {"a": np.ones(2), "b": np.array([np.nan, 0.0])})
    assert info.value.param_name == "b"
    assert np.all(params["a"] == 0)


def test_training_is_deterministic(rng):
    cloud = random_cloud(rng, 30)
    target = rng.normal(size=(30, 4))
    runs = []
    for _ in range(2):
        net, opt = PointFeatureNet(hidden=8, dim=4, seed=11), Adam(1e-2)
        for _ in range(3):
            out, record = net.forward(cloud)
            adam_step(net, net.backward(record, out - target), opt)
        runs.append(net.params)
    for name in PARAM_NAMES:
        assert runs[0][name].tobytes() == runs[1][name].tobytes()


def test_invariant_transform_identity_at_zero(rng):
    cloud = random_cloud(rng, 20)
    spec = TransformSpec(color_jitter=0.0, coord_noise=0.0)
    out = transform_invariant(cloud, spec, rng)
    np.testing.assert_array_equal(out.xyz, cloud.xyz)
    np.testing.assert_array_equal(out.rgb, cloud.rgb)


def test_coordinate_noise_half_normal_mean(rng):
    cloud = random_cloud(rng, 10_000)
    sigma = 0.01
    out = transform_invariant(cloud, TransformSpec(color_jitter=0.0, coord_noise=sigma), rng)
    mean_abs = np.abs(out.xyz - cloud.xyz).mean(axis=0)
    # standard error of |N(0, s^2)| over 1e4 samples is about 0.006 s
    np.testing.assert_allclose(mean_abs, sigma * np.sqrt(2 / np.pi), rtol=0.05)


def test_color_jitter_stays_in_unit_range(rng):
    cloud = random_cloud(rng, 500)
    out = transform_invariant(cloud, TransformSpec(color_jitter=0.5), rng)
    assert out.rgb.min() >= 0 and out.rgb.max() <= 1


def test_rotation_identity_inverse_and_isometry(rng):
    xyz = rng.normal(size=(50, 3))
    np.testing.assert_array_equal(rotate_z(xyz, 0.0), xyz)
    theta = 1.234
    np.testing.assert_allclose(rotate_z(rotate_z(xyz, theta), -theta), xyz, rtol=0, atol=1e-12)
    rot = rotate_z(xyz, theta, mirror=True)
    d0 = np.linalg.norm(xyz[:, None] - xyz[None], axis=-1)
    d1 = np.linalg.norm(rot[:, None] - rot[None], axis=-1)
    np.testing.assert_allclose(d1, d0, rtol=0, atol=1e-12)


def test_equivariant_transform_keeps_labels_by_index(rng):
    cloud = random_cloud(rng, 30, labels=rng.integers(0, 3, 30))
    out, record = transform_equivariant(cloud, TransformSpec(), rng)
    np.testing.assert_array_equal(out.labels, cloud.labels)
    np.testing.assert_allclose(out.xyz, rotate_z(cloud.xyz, record.angle, record.mirror))
    np.testing.assert_array_equal(out.xyz[:, 2], cloud.xyz[:, 2])


def test_transform_spec_validation():
    with pytest.raises(ValueError):
        TransformSpec(color_jitter=-1)
    with pytest.raises(ValueError):
        TransformSpec(mirror_prob=2)

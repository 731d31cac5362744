"""A small point feature network with hand-written gradients.

Architecture (per point)::

    x   = [xyz normalized to the scene bounding box, rgb]        (6)
    h1  = relu(x W_in + b_in)                                    (h)
    h2  = relu([h1, knn_mean(h1)] W_ctx1 + b_ctx1)                (h)
    h3  = relu([h2, knn_mean(h2)] W_ctx2 + b_ctx2)                (h)
    z   = h3 W_out + b_out                                       (D)
    out = z / |z|    (optional)

``knn_mean`` averages a hidden state over each point's k nearest
neighbors (itself excluded), found once per forward on raw coordinates.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.spatial import cKDTree

from .cloud import PointCloud

PARAM_NAMES = (
    "input.weight", "input.bias",
    "context1.weight", "context1.bias",
    "context2.weight", "context2.bias",
    "output.weight", "output.bias",
)

_versions = itertools.count(1)


def relu(a):
    return np.maximum(a, 0.0)


def linear_forward(x, weight, bias):
    return x @ weight + bias


def linear_backward(x, weight, grad_out):
    """Returns (grad_x, grad_weight, grad_bias) for ``y = x W + b``."""
    return grad_out @ weight.T, x.T @ grad_out, grad_out.sum(axis=0)


def normalize_rows(z):
    """Unit-L2 rows; zero rows stay zero. Returns (out, norms)."""
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return np.where(norms > 0, z / safe, 0.0), norms


def normalize_rows_backward(out, norms, grad_out):
    safe = np.where(norms > 0, norms, 1.0)
    proj = np.einsum("ij,ij->i", out, grad_out)[:, None]
    return np.where(norms > 0, (grad_out - out * proj) / safe, 0.0)


def knn_indices(xyz, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest other points, sorted by distance."""
    n = len(xyz)
    if n == 1:
        return np.zeros((1, 1), dtype=np.int64)
    k = min(k, n - 1)
    _, nbr = cKDTree(xyz).query(xyz, k=k + 1)
    nbr = nbr.reshape(n, k + 1)
    keep = nbr != np.arange(n)[:, None]
    # duplicates can hide the point itself; then drop the farthest instead
    missing_self = keep.all(axis=1)
    keep[missing_self, -1] = False
    return nbr[keep].reshape(n, k)


def network_inputs(cloud: PointCloud) -> np.ndarray:
    lo = cloud.xyz.min(axis=0)
    extent = cloud.xyz.max(axis=0) - lo
    extent = np.where(extent > 0, extent, 1.0)
    return np.hstack([(cloud.xyz - lo) / extent, cloud.rgb])


@dataclass
class ActivationRecord:
    version: int
    neighbors: np.ndarray
    k: int
    inputs: np.ndarray
    acts: dict = field(default_factory=dict)


class PointFeatureNet:
    """Parameters live in ``params``, a dict keyed by :data:`PARAM_NAMES`."""

    def __init__(self, hidden=64, k=8, dim=16, normalize_output=True, seed=0):
        if k < 1:
            raise ValueError("k must be at least 1")
        if dim < 2:
            raise ValueError("feature dimension must be at least 2")
        self.hidden = int(hidden)
        self.k = int(k)
        self.dim = int(dim)
        self.normalize_output = bool(normalize_output)
        rng = np.random.default_rng(seed)
        h = self.hidden

        def kaiming(fan_in, fan_out, gain=2.0):
            bound = np.sqrt(3.0 * gain / fan_in)
            return rng.uniform(-bound, bound, size=(fan_in, fan_out))

        self.params = {
            "input.weight": kaiming(6, h),
            "input.bias": np.zeros(h),
            "context1.weight": kaiming(2 * h, h),
            "context1.bias": np.zeros(h),
            "context2.weight": kaiming(2 * h, h),
            "context2.bias": np.zeros(h),
            "output.weight": kaiming(h, self.dim, gain=1.0),
            "output.bias": np.zeros(self.dim),
        }
        self.version = next(_versions)

    def hyperparameters(self) -> dict:
        return {"hidden": self.hidden, "k": self.k, "dim": self.dim,
                "normalize_output": self.normalize_output}

    def copy(self) -> "PointFeatureNet":
        other = object.__new__(PointFeatureNet)
        other.__dict__.update(self.hyperparameters())
        other.params = {name: p.copy() for name, p in self.params.items()}
        other.version = next(_versions)
        return other

    def touch(self):
        """Mark parameters as modified so older activation records go stale."""
        self.version = next(_versions)

    def forward(self, cloud: PointCloud, neighbors=None):
        """Per-point features (N, D) plus the record needed by :meth:`backward`."""
        if len(cloud) == 0:
            raise ValueError("cannot run the network on an empty cloud")
        p = self.params
        if neighbors is None:
            neighbors = knn_indices(cloud.xyz, self.k)
        x = network_inputs(cloud)
        a1 = linear_forward(x, p["input.weight"], p["input.bias"])
        h1 = relu(a1)
        c1 = np.hstack([h1, h1[neighbors].mean(axis=1)])
        a2 = linear_forward(c1, p["context1.weight"], p["context1.bias"])
        h2 = relu(a2)
        c2 = np.hstack([h2, h2[neighbors].mean(axis=1)])
        a3 = linear_forward(c2, p["context2.weight"], p["context2.bias"])
        h3 = relu(a3)
        z = linear_forward(h3, p["output.weight"], p["output.bias"])
        acts = dict(a1=a1, c1=c1, a2=a2, c2=c2, a3=a3, h3=h3)
        if self.normalize_output:
            out, norms = normalize_rows(z)
            acts.update(out=out, norms=norms)
        else:
            out = z
        record = ActivationRecord(self.version, neighbors, neighbors.shape[1], x, acts)
        return out, record

    def backward(self, record: ActivationRecord, output_grad) -> dict:
        """Exact gradient of ``<output, output_grad>`` for every parameter."""
        if record.version != self.version:
            raise ValueError("activation record is stale: parameters changed since forward")
        acts = record.acts
        output_grad = np.asarray(output_grad, dtype=np.float64)
        n = len(record.inputs)
        if output_grad.shape != (n, self.dim):
            raise ValueError(f"output_grad must be ({n}, {self.dim}), got {output_grad.shape}")
        p, h = self.params, self.hidden
        if self.normalize_output:
            dz = normalize_rows_backward(acts["out"], acts["norms"], output_grad)
        else:
            dz = output_grad
        grads = {}
        dh3, grads["output.weight"], grads["output.bias"] = linear_backward(
            acts["h3"], p["output.weight"], dz)
        da3 = dh3 * (acts["a3"] > 0)
        dc2, grads["context2.weight"], grads["context2.bias"] = linear_backward(
            acts["c2"], p["context2.weight"], da3)
        dh2 = dc2[:, :h] + self._knn_mean_backward(record, dc2[:, h:])
        da2 = dh2 * (acts["a2"] > 0)
        dc1, grads["context1.weight"], grads["context1.bias"] = linear_backward(
            acts["c1"], p["context1.weight"], da2)
        dh1 = dc1[:, :h] + self._knn_mean_backward(record, dc1[:, h:])
        da1 = dh1 * (acts["a1"] > 0)
        _, grads["input.weight"], grads["input.bias"] = linear_backward(
            record.inputs, p["input.weight"], da1)
        return grads

    @staticmethod
    def _knn_mean_backward(record, grad_mean):
        if "knn_adjoint" not in record.acts:
            nbr = record.neighbors
            n, k = nbr.shape
            rows = np.repeat(np.arange(n), k)
            record.acts["knn_adjoint"] = csr_matrix(
                (np.full(n * k, 1.0 / k), (nbr.reshape(-1), rows)), shape=(n, n))
        return record.acts["knn_adjoint"] @ grad_mean


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.param_name = name


class Adam:
    """Adam with bias correction. Keeps its own moment buffers."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m, self.v = {}, {}
        self.t = 0

    def step(self, params: dict, grads: dict):
        """Update ``params`` in place; rejects the whole step on any
        non-finite gradient."""
        for name, g in grads.items():
            if name not in params or np.shape(g) != np.shape(params[name]):
                raise ValueError(f"gradient {name!r} does not match the parameters")
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(name)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, g in grads.items():
            m = self.m.get(name, 0.0) * b1 + (1 - b1) * g
            v = self.v.get(name, 0.0) * b2 + (1 - b2) * g * g
            self.m[name], self.v[name] = m, v
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(net: PointFeatureNet, grads: dict, optimizer: Adam):
    optimizer.step(net.params, grads)
    net.touch()
    return net, optimizer


@dataclass(frozen=True)
class TransformSpec:
    """Amplitudes of the invariance (photometric/noise) and equivariance
    (rotation about z, mirror) perturbations."""

    color_jitter: float = 0.05
    coord_noise: float = 0.005
    rotation_range: float = 2 * np.pi
    mirror_prob: float = 0.5

    def __post_init__(self):
        if self.color_jitter < 0 or self.coord_noise < 0:
            raise ValueError("amplitudes must be non-negative")
        if not 0 <= self.rotation_range <= 2 * np.pi:
            raise ValueError("rotation range must lie in [0, 2*pi]")
        if not 0 <= self.mirror_prob <= 1:
            raise ValueError("mirror probability must lie in [0, 1]")


def transform_invariant(cloud: PointCloud, spec: TransformSpec, rng) -> PointCloud:
    rgb, xyz = cloud.rgb, cloud.xyz
    if spec.color_jitter > 0:
        rgb = np.clip(rgb + rng.uniform(-spec.color_jitter, spec.color_jitter, rgb.shape), 0.0, 1.0)
    if spec.coord_noise > 0:
        xyz = xyz + rng.normal(0.0, spec.coord_noise, xyz.shape)
    return PointCloud(xyz, rgb, cloud.labels)


@dataclass(frozen=True)
class EquivariantRecord:
    angle: float
    mirror: bool


def rotate_z(xyz, angle: float, mirror: bool = False) -> np.ndarray:
    """Optional mirror (x -> -x) followed by a rotation about +z."""
    xyz = np.array(xyz, dtype=np.float64)
    if mirror:
        xyz[:, 0] = -xyz[:, 0]
    c, s = np.cos(angle), np.sin(angle)
    x, y = xyz[:, 0].copy(), xyz[:, 1].copy()
    xyz[:, 0] = c * x - s * y
    xyz[:, 1] = s * x + c * y
    return xyz


def transform_equivariant(cloud: PointCloud, spec: TransformSpec, rng):
    """Random rotation about the gravity axis plus optional mirror.

    Point order is preserved, so per-point and per-voxel label arrays carry
    over unchanged by index.
    """
    angle = float(rng.uniform(0.0, spec.rotation_range)) if spec.rotation_range > 0 else 0.0
    mirror = bool(rng.random() < spec.mirror_prob) if spec.mirror_prob > 0 else False
    out = PointCloud(rotate_z(cloud.xyz, angle, mirror), cloud.rgb, cloud.labels)
    return out, EquivariantRecord(angle, mirror)

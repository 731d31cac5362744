"""Binary artifact codecs.

Every file starts with a 4-byte ASCII magic and a little-endian u32 format
version; all numbers are little-endian.

========  ==============================================================
PDPC      N u32, N x 6 f64 (x, y, z, r, g, b), optional N x i32 labels
PDCM      fx, fy, cx, cy f64, W, H u32, 12 f64 row-major [R | t]
PDFM      H, W, D u32, H*W*D f32, H*W validity bytes
PDSV      N, M u32, N x i32 voxel ids
PDCK      hyperparameters, then named f64 tensors (see :func:`encode_checkpoint`)
========  ==============================================================

Metrics reports are UTF-8 text (:func:`encode_report`).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .cloud import PointCloud
from .evaluation import REPORT_HEADER, MetricsReport
from .featnet import PARAM_NAMES, PointFeatureNet
from .geometry import CameraModel
from .supervoxel import SuperVoxelPartition

FORMAT_VERSION = 1


class CodecError(ValueError):
    """Raised for truncated, mislabeled or otherwise malformed artifacts."""


class _Reader:
    def __init__(self, data: bytes, kind: str):
        self.data, self.pos, self.kind = memoryview(data), 0, kind

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CodecError(f"truncated {self.kind} data")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return bytes(out)

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def array(self, dtype, count):
        dt = np.dtype(dtype).newbyteorder("<")
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).astype(dtype.lstrip("<"))

    @property
    def remaining(self) -> int:
        return len(self.data) - self.pos

    def finish(self):
        if self.remaining:
            raise CodecError(f"{self.remaining} trailing bytes in {self.kind} data")


def _header(magic: bytes) -> bytes:
    return magic + struct.pack("<I", FORMAT_VERSION)


def _open(data: bytes, magic: bytes) -> _Reader:
    kind = magic.decode()
    r = _Reader(data, kind)
    if r.take(4) != magic:
        raise CodecError(f"bad magic: not a {kind} file")
    (version,) = r.unpack("I")
    if version != FORMAT_VERSION:
        raise CodecError(f"unsupported {kind} version {version}")
    return r


def _le(a, dtype) -> bytes:
    return np.ascontiguousarray(a, dtype=np.dtype(dtype).newbyteorder("<")).tobytes()


def _u32(n) -> int:
    n = int(n)
    if not 0 <= n < 2 ** 32:
        raise CodecError(f"value {n} does not fit in u32")
    return n


# point clouds

def encode_cloud(cloud: PointCloud) -> bytes:
    parts = [_header(b"PDPC"), struct.pack("<I", _u32(len(cloud))),
             _le(np.hstack([cloud.xyz, cloud.rgb]), "f8")]
    if cloud.labels is not None:
        parts.append(_le(cloud.labels, "i4"))
    return b"".join(parts)


def decode_cloud(data: bytes) -> PointCloud:
    r = _open(data, b"PDPC")
    (n,) = r.unpack("I")
    rec = r.array("f8", 6 * n).reshape(n, 6)
    labels = None
    if r.remaining:
        labels = r.array("i4", n).astype(np.int64)
    r.finish()
    return PointCloud(rec[:, :3], rec[:, 3:], labels)


# cameras

def encode_camera(cam: CameraModel) -> bytes:
    extr = np.hstack([cam.rotation, cam.translation[:, None]])
    return b"".join([_header(b"PDCM"), struct.pack("<4d", cam.fx, cam.fy, cam.cx, cam.cy),
                     struct.pack("<2I", _u32(cam.width), _u32(cam.height)), _le(extr, "f8")])


def decode_camera(data: bytes) -> CameraModel:
    r = _open(data, b"PDCM")
    fx, fy, cx, cy = r.unpack("4d")
    w, h = r.unpack("2I")
    extr = r.array("f8", 12).reshape(3, 4)
    r.finish()
    try:
        return CameraModel(fx, fy, cx, cy, w, h, extr[:, :3], extr[:, 3])
    except ValueError as exc:
        raise CodecError(f"invalid camera: {exc}") from exc


# feature maps

def encode_feature_map(fmap, valid=None) -> bytes:
    fmap = np.asarray(fmap)
    if fmap.ndim != 3:
        raise CodecError(f"feature map must be (H, W, D), got {fmap.shape}")
    h, w, d = fmap.shape
    valid = np.ones((h, w), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if valid.shape != (h, w):
        raise CodecError("validity mask must be (H, W)")
    return b"".join([_header(b"PDFM"), struct.pack("<3I", _u32(h), _u32(w), _u32(d)),
                     _le(fmap, "f4"), valid.astype(np.uint8).tobytes()])


def decode_feature_map(data: bytes):
    """Returns ``(feature_map float32 (H, W, D), valid bool (H, W))``."""
    r = _open(data, b"PDFM")
    h, w, d = r.unpack("3I")
    fmap = r.array("f4", h * w * d).reshape(h, w, d)
    flags = r.array("u1", h * w).reshape(h, w)
    r.finish()
    if np.any(flags > 1):
        raise CodecError("validity bytes must be 0 or 1")
    return fmap, flags.astype(bool)


# partitions

def encode_partition(part: SuperVoxelPartition) -> bytes:
    return b"".join([_header(b"PDSV"), struct.pack("<2I", _u32(part.n_points), _u32(part.n_voxels)),
                     _le(part.voxel_of, "i4")])


def decode_partition(data: bytes) -> SuperVoxelPartition:
    r = _open(data, b"PDSV")
    n, m = r.unpack("2I")
    ids = r.array("i4", n).astype(np.int64)
    r.finish()
    try:
        return SuperVoxelPartition(ids, m)
    except ValueError as exc:
        raise CodecError(f"invalid partition: {exc}") from exc


# checkpoints

@dataclass
class Checkpoint:
    """Network weights plus whatever clustering state was learned with them."""

    net: PointFeatureNet
    centroids: Optional[np.ndarray] = None
    tensors: dict = field(default_factory=dict)


_HYPER_FMT = "<3I?"


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    """Layout after the header: hidden, k, dim u32, normalize_output u8,
    tensor count u32, then per tensor: name length u16, UTF-8 name,
    ndim u32, dims u32 each, f64 data. Network parameters come first in
    canonical order, then ``centroids`` (if any), then extra tensors."""
    net = ckpt.net
    named = [(name, net.params[name]) for name in PARAM_NAMES]
    if ckpt.centroids is not None:
        named.append(("centroids", ckpt.centroids))
    named += sorted(ckpt.tensors.items())
    parts = [_header(b"PDCK"), struct.pack(_HYPER_FMT, net.hidden, net.k, net.dim, net.normalize_output),
             struct.pack("<I", len(named))]
    for name, t in named:
        t = np.asarray(t, dtype=np.float64)
        raw = name.encode("utf-8")
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<I", t.ndim),
                  struct.pack(f"<{t.ndim}I", *map(_u32, t.shape)), _le(t, "f8")]
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> Checkpoint:
    r = _open(data, b"PDCK")
    hidden, k, dim, normalize = r.unpack(_HYPER_FMT[1:])
    (count,) = r.unpack("I")
    tensors = {}
    for _ in range(count):
        (length,) = r.unpack("H")
        try:
            name = r.take(length).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CodecError("tensor name is not UTF-8") from exc
        (ndim,) = r.unpack("I")
        shape = r.unpack(f"{ndim}I")
        if name in tensors:
            raise CodecError(f"duplicate tensor {name!r}")
        tensors[name] = r.array("f8", int(np.prod(shape, dtype=np.int64))).reshape(shape)
    r.finish()
    try:
        net = PointFeatureNet(hidden=hidden, k=k, dim=dim, normalize_output=normalize)
    except ValueError as exc:
        raise CodecError(f"invalid hyperparameters: {exc}") from exc
    for name in PARAM_NAMES:
        if name not in tensors:
            raise CodecError(f"checkpoint lacks tensor {name!r}")
        t = tensors.pop(name)
        if t.shape != net.params[name].shape:
            raise CodecError(f"tensor {name!r} has shape {t.shape}, expected {net.params[name].shape}")
        net.params[name] = t
    return Checkpoint(net, tensors.pop("centroids", None), tensors)


# metrics reports

_TABLE_HEADER = "class iou gt_points pred_points"
_CORE_KEYS = ("n_points", "n_classes", "miou", "accuracy", "mean_class_accuracy", "matching")


def encode_report(report: MetricsReport) -> bytes:
    return report.to_text().encode("utf-8")


def decode_report(data: bytes) -> MetricsReport:
    try:
        lines = data.decode("utf-8").split("\n")
    except UnicodeDecodeError as exc:
        raise CodecError("report is not UTF-8") from exc
    if not lines or lines[0] != REPORT_HEADER:
        raise CodecError("missing report header")
    try:
        blank = lines.index("")
        fields = dict(line.split(" = ", 1) for line in lines[1:blank])
        if lines[blank + 1] != _TABLE_HEADER:
            raise CodecError("missing per-class table")
        n_classes = int(fields["n_classes"])
        rows = [line.split() for line in lines[blank + 2:blank + 2 + n_classes]]
        if any(len(row) != 4 for row in rows) or len(rows) != n_classes:
            raise CodecError("malformed per-class table")
        matching = fields["matching"].split()
        report = MetricsReport(
            iou=np.array([float(row[1]) for row in rows]),
            miou=float(fields["miou"]),
            accuracy=float(fields["accuracy"]),
            mean_class_accuracy=float(fields["mean_class_accuracy"]),
            permutation=np.array([int(p) for p in matching], dtype=np.int64),
            gt_counts=np.array([int(row[2]) for row in rows], dtype=np.int64),
            pred_counts=np.array([int(row[3]) for row in rows], dtype=np.int64),
            extra={k: v for k, v in fields.items() if k not in _CORE_KEYS},
        )
    except (KeyError, ValueError, IndexError) as exc:
        if isinstance(exc, CodecError):
            raise
        raise CodecError(f"malformed report: {exc}") from exc
    if report.to_text().encode("utf-8") != data:
        raise CodecError("report is not in canonical form")
    return report


# file helpers

_CODECS = {
    "cloud": (encode_cloud, decode_cloud),
    "camera": (encode_camera, decode_camera),
    "feature_map": (lambda x: encode_feature_map(*x), decode_feature_map),
    "partition": (encode_partition, decode_partition),
    "checkpoint": (encode_checkpoint, decode_checkpoint),
    "report": (encode_report, decode_report),
}


def write_artifact(path, kind: str, obj) -> Path:
    path = Path(path)
    data = _CODECS[kind][0](obj)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def read_artifact(path, kind: str):
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"missing {kind} file {path}") from exc
    try:
        return _CODECS[kind][1](data)
    except CodecError as exc:
        raise CodecError(f"malformed {kind} file {path}: {exc}") from exc

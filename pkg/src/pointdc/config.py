"""Flat ``key = value`` run configuration with typed, documented defaults."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Option:
    default: object
    help: str
    choices: tuple = ()


OPTIONS = {
    # dataset generation
    "seed": Option(0, "master seed for generation and training"),
    "n_scenes": Option(8, "number of synthetic scenes"),
    "n_classes": Option(5, "semantic classes: floor, walls and n_classes - 2 object classes"),
    "points_per_scene": Option(4096, "points sampled per scene"),
    "n_cameras": Option(4, "views per scene"),
    "image_size": Option(64, "square image side in pixels"),
    "feature_dim": Option(16, "2D oracle and point feature dimension"),
    "oracle_noise": Option(0.15, "per-pixel Gaussian feature noise"),
    "oracle_nuisance": Option(0.2, "per-view shared feature offset amplitude"),
    "density_ratio": Option(10.0, "point density of the first object class relative to the rest"),
    "color_noise": Option(0.3, "per-point Gaussian RGB noise"),
    "instance_color_shift": Option(0.0, "per-instance uniform RGB offset amplitude"),
    # partition
    "partition_strategy": Option("surface_grid", "super-voxel strategy",
                                 ("surface_grid", "uniform_grid", "region_grow")),
    "cell_size": Option(0.5, "grid cell edge in meters"),
    "normal_deg": Option(10.0, "region growing normal threshold in degrees"),
    "color_tol": Option(0.1, "region growing RGB distance threshold"),
    "min_size": Option(1, "region growing minimum segment size"),
    "split_cells": Option(False, "cut region-grown segments along the grid"),
    # network
    "hidden": Option(64, "hidden width of the point network"),
    "knn": Option(8, "neighbors in each context block"),
    # distillation
    "cmd_epochs": Option(30, "distillation epochs"),
    "cmd_lr": Option(1e-3, "distillation Adam learning rate"),
    # super-voxel clustering
    "n_clusters": Option(5, "number of clusters C"),
    "svc_iterations": Option(3, "outer clustering iterations"),
    "svc_epochs": Option(5, "training epochs per clustering iteration"),
    "svc_lr": Option(1e-3, "clustering-stage Adam learning rate"),
    "tau": Option(1.0, "softmax temperature over cosine similarities"),
    "sphere": Option(True, "spherical K-means (unit-norm centroids)"),
    "nonparametric": Option(True, "classify by centroid similarity instead of a learned head"),
    "label_pooling": Option(True, "average soft labels over each super-voxel before hardening"),
    "transforms": Option(True, "apply invariance and equivariance transforms while training"),
    "color_jitter": Option(0.05, "uniform RGB jitter amplitude"),
    "coord_noise": Option(0.005, "Gaussian coordinate noise in meters"),
    "rotation_range": Option(2 * math.pi, "maximum rotation about z in radians"),
    "mirror_prob": Option(0.5, "probability of mirroring x"),
    "kmeans_max_iters": Option(100, "Lloyd iteration cap"),
    "kmeans_n_init": Option(10, "k-means++ restarts when no warm start is available"),
    # point-level baseline
    "baseline_iterations": Option(3, "baseline clustering iterations"),
    "baseline_epochs": Option(5, "baseline epochs per iteration"),
    "baseline_lr": Option(1e-3, "baseline Adam learning rate"),
    # linear probe
    "probe_epochs": Option(50, "probe epochs"),
    "probe_lr": Option(0.05, "probe Adam learning rate"),
    "probe_batch_size": Option(256, "probe mini-batch size"),
    "probe_holdout": Option(0.2, "held-out fraction"),
}

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _parse_value(key: str, text: str):
    opt = OPTIONS[key]
    kind = type(opt.default)
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low not in _TRUE | _FALSE:
                raise ValueError
            value = low in _TRUE
        elif kind is int:
            value = int(text)
        elif kind is float:
            value = float(text)
            if not math.isfinite(value):
                raise ValueError
        else:
            value = text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r} is not a valid {kind.__name__}") from None
    if opt.choices and value not in opt.choices:
        raise ConfigError(f"bad value for {key}: {value!r} not in {', '.join(opt.choices)}")
    return value


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class RunConfig:
    """Mapping of every option in :data:`OPTIONS` to its effective value."""

    def __init__(self, **overrides):
        self._values = {k: opt.default for k, opt in OPTIONS.items()}
        self.update(overrides)

    def update(self, values: dict):
        for key, value in values.items():
            if key not in OPTIONS:
                raise ConfigError(f"unknown config key {key!r}")
            if isinstance(value, str):
                value = _parse_value(key, value)
            else:
                value = _parse_value(key, _format_value(value))
            self._values[key] = value
        return self

    def __getitem__(self, key):
        return self._values[key]

    def __getattr__(self, key):
        try:
            return self.__dict__["_values"][key]
        except KeyError:
            raise AttributeError(key) from None

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self._values == other._values

    def as_dict(self) -> dict:
        return dict(self._values)

    def to_text(self) -> str:
        """Effective configuration, one ``key = value`` per line, in
        declaration order."""
        return "".join(f"{k} = {_format_value(v)}\n" for k, v in self._values.items())

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in values:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
            if key not in OPTIONS:
                raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
            try:
                values[key] = _parse_value(key, value)
            except ConfigError as exc:
                raise ConfigError(f"{source}:{lineno}: {exc}") from None
        return cls(**values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ConfigError(f"missing config file {path}") from None
        return cls.parse(text, str(path))


def describe_options() -> str:
    """Human-readable table of every key, its default and meaning."""
    width = max(map(len, OPTIONS))
    return "\n".join(f"{k:<{width}}  {_format_value(o.default):<18} {o.help}"
                     for k, o in OPTIONS.items())

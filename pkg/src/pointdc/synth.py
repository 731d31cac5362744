"""Deterministic synthetic rooms and a multi-view 2D feature oracle.

Class 0 is the floor, class 1 the walls, and classes ``2..C-1`` are object
classes resting on the floor; object class ``c`` is a box, cylinder or
sphere according to ``(c - 2) % 3``. Each class has
its own point density multiplier, so the point share of a class follows its
surface area times its density.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .cloud import PointCloud, Scene
from .geometry import CameraModel, project_points, zbuffer_visibility
from .supervoxel import SuperVoxelPartition, cell_keys, grid_cells, partition

PALETTE = np.array([
    [0.9, 0.9, 0.9], [0.1, 0.1, 0.9], [0.9, 0.1, 0.1], [0.1, 0.9, 0.1], [0.9, 0.9, 0.1],
    [0.9, 0.1, 0.9], [0.1, 0.9, 0.9], [0.1, 0.1, 0.1], [0.5, 0.5, 0.5],
])


SHAPES = ("box", "cylinder", "sphere")


@dataclass(frozen=True)
class SceneSpec:
    n_classes: int = 5
    objects_range: tuple = (3, 5)
    room_size: tuple = (4.0, 4.0)
    wall_height: float = 1.0
    densities: tuple = ()
    base_colors: tuple = ()
    color_noise: float = 0.3
    instance_color_shift: float = 0.0
    n_cameras: int = 4
    camera_radius: float = 1.2
    camera_height: float = 2.2
    fov_deg: float = 90.0
    image_size: int = 64
    points_per_scene: int = 4096

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.n_cameras < 1:
            raise ValueError("need at least one camera")
        lo, hi = self.objects_range
        if lo < 0 or hi < lo:
            raise ValueError("invalid object count range")
        if self.n_classes > 2 and hi < self.n_classes - 2:
            raise ValueError("object count range cannot cover every object class")
        if self.densities and (len(self.densities) != self.n_classes or min(self.densities) <= 0):
            raise ValueError("one positive density multiplier per class is required")
        if self.base_colors and len(self.base_colors) != self.n_classes:
            raise ValueError("one base color per class is required")

    def class_densities(self) -> np.ndarray:
        return np.asarray(self.densities or [1.0] * self.n_classes, dtype=np.float64)

    def class_colors(self) -> np.ndarray:
        if self.base_colors:
            return np.asarray(self.base_colors, dtype=np.float64)
        if self.n_classes <= len(PALETTE):
            return PALETTE[: self.n_classes].copy()
        extra = np.random.default_rng(12345).uniform(0.1, 0.9, (self.n_classes - len(PALETTE), 3))
        return np.vstack([PALETTE, extra])

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def benchmark_spec(n_classes=5, density_ratio=10.0, **overrides) -> SceneSpec:
    """Default benchmark: the first object class is ``density_ratio`` times
    denser than everything else."""
    densities = [1.0] * n_classes
    densities[2 if n_classes > 2 else 0] = density_ratio
    return SceneSpec(n_classes=n_classes, densities=tuple(densities), **overrides)


@dataclass
class Surface:
    kind: str
    label: int
    area: float
    params: dict = field(default_factory=dict)
    instance: int = 0


def _room_surfaces(spec):
    sx, sy = spec.room_size
    h = spec.wall_height
    surfaces = [Surface("rect", 0, sx * sy, dict(origin=(-sx / 2, -sy / 2, 0.0),
                                                   e1=(sx, 0, 0), e2=(0, sy, 0)))]
    walls = [((-sx / 2, -sy / 2, 0), (sx, 0, 0)), ((-sx / 2, sy / 2, 0), (sx, 0, 0)),
             ((-sx / 2, -sy / 2, 0), (0, sy, 0)), ((sx / 2, -sy / 2, 0), (0, sy, 0))]
    for i, (origin, e1) in enumerate(walls):
        surfaces.append(Surface("rect", 1, np.linalg.norm(e1) * h,
                                dict(origin=origin, e1=e1, e2=(0, 0, h)), instance=1 + i))
    return surfaces


def _object_surfaces(shape, label, center, size, yaw):
    cx, cy = center
    out = []
    if shape == "box":
        a, b, h = size
        c, s = np.cos(yaw), np.sin(yaw)
        ex, ey = np.array([c, s, 0.0]), np.array([-s, c, 0.0])
        base = np.array([cx, cy, 0.0])
        corner = base - a * ex - b * ey
        out.append(Surface("rect", label, 4 * a * b, dict(origin=tuple(corner + [0, 0, h]),
                                                          e1=tuple(2 * a * ex), e2=tuple(2 * b * ey))))
        z = np.array([0.0, 0.0, h])
        for o, e in [(corner, 2 * a * ex), (corner, 2 * b * ey),
                     (corner + 2 * b * ey, 2 * a * ex), (corner + 2 * a * ex, 2 * b * ey)]:
            out.append(Surface("rect", label, np.linalg.norm(e) * h,
                               dict(origin=tuple(o), e1=tuple(e), e2=tuple(z))))
    elif shape == "cylinder":
        r, h = size
        out.append(Surface("cyl_side", label, 2 * np.pi * r * h, dict(center=(cx, cy), r=r, h=h)))
        out.append(Surface("disk", label, np.pi * r * r, dict(center=(cx, cy, h), r=r)))
    elif shape == "sphere":
        (r,) = size
        out.append(Surface("sphere", label, 4 * np.pi * r * r, dict(center=(cx, cy, r), r=r)))
    else:
        raise ValueError(f"unknown shape {shape!r}")
    return out


def _footprint(shape, size):
    if shape == "box":
        return float(np.hypot(size[0], size[1]))
    return float(size[0])


def _sample_surface(surface, n, rng):
    p = surface.params
    if surface.kind == "rect":
        st = rng.random((n, 2))
        return (np.asarray(p["origin"]) + st[:, :1] * np.asarray(p["e1"])
                + st[:, 1:] * np.asarray(p["e2"]))
    if surface.kind == "cyl_side":
        theta = rng.uniform(0, 2 * np.pi, n)
        z = rng.uniform(0, p["h"], n)
        cx, cy = p["center"]
        return np.column_stack([cx + p["r"] * np.cos(theta), cy + p["r"] * np.sin(theta), z])
    if surface.kind == "disk":
        rad = p["r"] * np.sqrt(rng.random(n))
        theta = rng.uniform(0, 2 * np.pi, n)
        cx, cy, cz = p["center"]
        return np.column_stack([cx + rad * np.cos(theta), cy + rad * np.sin(theta), np.full(n, cz)])
    if surface.kind == "sphere":
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return np.asarray(p["center"]) + p["r"] * d
    raise ValueError(surface.kind)


def _place_objects(spec, rng, max_attempts=200, restarts=20):
    """Non-overlapping object layout. Every object class appears at least
    once; the whole layout is resampled when greedy placement gets stuck."""
    n_obj_classes = spec.n_classes - 2
    if n_obj_classes <= 0:
        return []
    lo, hi = spec.objects_range
    count = int(rng.integers(max(lo, n_obj_classes), hi + 1))
    labels = list(range(2, spec.n_classes)) + [
        int(c) for c in rng.integers(2, spec.n_classes, count - n_obj_classes)]
    sx, sy = spec.room_size
    margin = 0.2
    for _ in range(restarts):
        placed = []
        for label in labels:
            shape = SHAPES[(label - 2) % len(SHAPES)]
            if shape == "box":
                size = (rng.uniform(0.2, 0.4), rng.uniform(0.2, 0.4), rng.uniform(0.4, 1.0))
            elif shape == "cylinder":
                size = (rng.uniform(0.2, 0.4), rng.uniform(0.5, 1.0))
            else:
                size = (rng.uniform(0.25, 0.45),)
            radius = _footprint(shape, size)
            half_x = sx / 2 - radius - margin
            half_y = sy / 2 - radius - margin
            if half_x <= 0 or half_y <= 0:
                raise ValueError(f"objects overflow room: footprint radius {radius:.2f} m "
                                 f"does not fit a {sx}x{sy} m room")
            for _ in range(max_attempts):
                center = (rng.uniform(-half_x, half_x), rng.uniform(-half_y, half_y))
                if all(np.hypot(center[0] - o[2][0], center[1] - o[2][1]) > radius + o[5] + margin
                       for o in placed):
                    placed.append((shape, label, center, size, rng.uniform(0, np.pi), radius))
                    break
            else:
                break
        if len(placed) == len(labels):
            return placed
    raise ValueError(f"objects overflow room: could not place {len(labels)} objects "
                     f"in a {sx}x{sy} m room")


def make_cameras(spec, rng=None):
    """Cameras on a ring around the room center, looking at the middle of
    the floor, with a square field of view of ``fov_deg``."""
    size = spec.image_size
    f = (size / 2) / np.tan(np.deg2rad(spec.fov_deg) / 2)
    phase = 0.0 if rng is None else float(rng.uniform(0, 2 * np.pi / spec.n_cameras))
    cams = []
    for i in range(spec.n_cameras):
        a = phase + 2 * np.pi * i / spec.n_cameras
        eye = (spec.camera_radius * np.cos(a), spec.camera_radius * np.sin(a), spec.camera_height)
        cams.append(CameraModel.look_at(eye, (0.0, 0.0, 0.0), f, f, size / 2, size / 2, size, size))
    return cams


def _scene_surfaces(spec, rng):
    surfaces = _room_surfaces(spec)
    for i, (shape, label, center, size, yaw, _) in enumerate(_place_objects(spec, rng)):
        for surf in _object_surfaces(shape, label, center, size, yaw):
            surf.instance = 5 + i
            surfaces.append(surf)
    return surfaces


def generate_scene_instances(spec: SceneSpec, seed):
    """Like :func:`generate_scene`, also returning the per-point surface
    instance id (floor, each wall, each object)."""
    rng = np.random.default_rng(seed)
    surfaces = _scene_surfaces(spec, rng)
    dens = spec.class_densities()
    weights = np.array([s.area * dens[s.label] for s in surfaces])
    counts = rng.multinomial(spec.points_per_scene, weights / weights.sum())
    xyz = np.vstack([_sample_surface(s, c, rng) for s, c in zip(surfaces, counts)])
    labels = np.concatenate([np.full(c, s.label) for s, c in zip(surfaces, counts)])
    instances = np.concatenate([np.full(c, s.instance) for s, c in zip(surfaces, counts)])
    order = rng.permutation(len(xyz))
    xyz, labels, instances = xyz[order], labels[order], instances[order]
    n_inst = int(instances.max()) + 1
    shift = rng.uniform(-spec.instance_color_shift, spec.instance_color_shift, (n_inst, 3))
    colors = spec.class_colors()[labels] + shift[instances]
    rgb = np.clip(colors + rng.normal(0.0, spec.color_noise, colors.shape), 0.0, 1.0)
    return PointCloud(xyz, rgb, labels), make_cameras(spec, rng), instances


def generate_scene(spec: SceneSpec, seed):
    """Sample one room. Returns ``(cloud with labels, cameras)``."""
    cloud, cameras, _ = generate_scene_instances(spec, seed)
    return cloud, cameras


def expected_class_share(spec: SceneSpec, surfaces) -> np.ndarray:
    """Analytic point share per class for a given surface list."""
    dens = spec.class_densities()
    w = np.zeros(spec.n_classes)
    for s in surfaces:
        w[s.label] += s.area * dens[s.label]
    return w / w.sum()


def scene_surfaces(spec: SceneSpec, seed):
    """The surfaces :func:`generate_scene` samples for ``seed``."""
    return _scene_surfaces(spec, np.random.default_rng(seed))


@dataclass
class FeatureOracle:
    """Stand-in for a pretrained 2D backbone: each pixel shows the embedding
    of its visible point's class, plus pixel noise and a per-view offset."""

    embeddings: np.ndarray
    noise: float = 0.15
    nuisance: float = 0.2

    @classmethod
    def create(cls, n_classes, dim, noise=0.15, nuisance=0.2, seed=0):
        if dim < n_classes:
            raise ValueError("feature dimension must be at least the class count")
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.normal(size=(dim, n_classes)))
        return cls(np.ascontiguousarray(q.T), noise, nuisance)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


def render_views(cloud: PointCloud, cameras, oracle: FeatureOracle, rng):
    """Splat points into every camera and paint oracle features.

    Returns a list of ``(feature_map float32 (H, W, D), valid (H, W))``.
    """
    out = []
    for cam in cameras:
        vis = zbuffer_visibility(project_points(cloud.xyz, cam), cam)
        valid = vis.occupied
        fmap = np.zeros((cam.height, cam.width, oracle.dim))
        fmap[valid] = oracle.embeddings[cloud.labels[vis.winner[valid]]]
        if oracle.noise > 0:
            fmap[valid] += rng.normal(0.0, oracle.noise, (int(valid.sum()), oracle.dim))
        if oracle.nuisance > 0:
            direction = rng.normal(size=oracle.dim)
            fmap[valid] += oracle.nuisance * direction / np.linalg.norm(direction)
        out.append((fmap.astype(np.float32), valid))
    return out


def surface_partition(xyz, instances, cell_size):
    """Surface instances cut along a grid: the synthetic counterpart of
    mesh-segment super-voxels, which never straddle two objects."""
    cells = grid_cells(xyz, cell_size)
    return SuperVoxelPartition.from_labels(cell_keys(np.column_stack([instances, cells])))


@dataclass(frozen=True)
class PartitionSettings:
    """``surface_grid`` (generator-only) or any :func:`partition` strategy."""

    strategy: str = "surface_grid"
    cell_size: float = 0.5
    normal_deg: float = 10.0
    color_tol: float = 0.1
    min_size: int = 1
    split_cells: bool = False

    def apply(self, cloud, instances=None):
        if self.strategy == "surface_grid":
            if instances is None:
                raise ValueError("surface_grid partitions need generator instance ids")
            return surface_partition(cloud.xyz, instances, self.cell_size)
        return partition(cloud, self.strategy, cell_size=self.cell_size, normal_deg=self.normal_deg,
                         color_tol=self.color_tol, min_size=self.min_size,
                         split_cells=self.split_cells)


def make_dataset(spec: SceneSpec, n_scenes, seed=0, feature_dim=16, noise=0.15, nuisance=0.2,
                 partition_settings: PartitionSettings | None = None):
    """In-memory dataset of ``n_scenes`` scenes with rendered views and
    partitions. Returns ``(scenes, oracle)``."""
    if n_scenes < 1:
        raise ValueError("n_scenes must be at least 1")
    settings = partition_settings or PartitionSettings()
    root = np.random.SeedSequence(seed)
    oracle_seed, *scene_seeds = root.spawn(n_scenes + 1)
    oracle = FeatureOracle.create(spec.n_classes, feature_dim, noise, nuisance,
                                  np.random.default_rng(oracle_seed))
    scenes = []
    for i, ss in enumerate(scene_seeds):
        geo_seed, render_seed = ss.spawn(2)
        cloud, cams, instances = generate_scene_instances(spec, np.random.default_rng(geo_seed))
        views = render_views(cloud, cams, oracle, np.random.default_rng(render_seed))
        scenes.append(Scene(f"scene_{i:03d}", cloud, cams, [v[0] for v in views],
                            [v[1] for v in views], settings.apply(cloud, instances), instances))
    return scenes, oracle


def generate_dataset(spec: SceneSpec, n_scenes, seed, out_dir, feature_dim=16, noise=0.15,
                     nuisance=0.2, partition_settings: PartitionSettings | None = None) -> dict:
    """Generate with :func:`make_dataset` and write every artifact plus a
    manifest under ``out_dir``. Returns the manifest."""
    from .dataset import write_dataset

    settings = partition_settings or PartitionSettings()
    scenes, oracle = make_dataset(spec, n_scenes, seed, feature_dim, noise, nuisance, settings)
    generator = {"seed": int(seed), "n_scenes": int(n_scenes), "feature_dim": int(feature_dim),
                 "noise": float(noise), "nuisance": float(nuisance),
                 "partition": asdict(settings)}
    return write_dataset(out_dir, scenes, spec, generator)

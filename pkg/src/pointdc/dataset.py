"""On-disk dataset layout and run manifests.

Dataset directory::

    manifest.json
    scene_000/cloud.pdpc        points, colors, ground-truth labels
    scene_000/instances.pdsv    surface instance id per point
    scene_000/partition.pdsv    super-voxels
    scene_000/camera_0.pdcm     one camera + feature map per view
    scene_000/view_0.pdfm
    ...
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from . import codecs
from .cloud import Scene
from .supervoxel import SuperVoxelPartition

MANIFEST = "manifest.json"


def file_entry(root: Path, path: Path) -> dict:
    data = path.read_bytes()
    return {"path": path.relative_to(root).as_posix(), "bytes": len(data),
            "sha256": hashlib.sha256(data).hexdigest()}


def write_manifest(root, kind: str, extra: dict | None = None) -> dict:
    """Hash every file under ``root`` (except the manifest itself) and write
    ``manifest.json``. Contents are deterministic: no timestamps, sorted keys."""
    root = Path(root)
    files = sorted(p for p in root.rglob("*") if p.is_file() and p.name != MANIFEST)
    manifest = {"kind": kind, "format_version": codecs.FORMAT_VERSION,
                "files": [file_entry(root, p) for p in files]}
    manifest.update(extra or {})
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                 encoding="utf-8")
    return manifest


def read_manifest(root, kind: str | None = None) -> dict:
    path = Path(root) / MANIFEST
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FileNotFoundError(f"missing manifest {path}") from None
    except json.JSONDecodeError as exc:
        raise codecs.CodecError(f"malformed manifest {path}: {exc.msg}") from None
    if kind is not None and manifest.get("kind") != kind:
        raise codecs.CodecError(f"{path} describes a {manifest.get('kind')!r}, expected {kind!r}")
    return manifest


def scene_files(name: str, n_views: int) -> dict:
    files = {"cloud": f"{name}/cloud.pdpc", "instances": f"{name}/instances.pdsv",
             "partition": f"{name}/partition.pdsv"}
    for j in range(n_views):
        files[f"camera_{j}"] = f"{name}/camera_{j}.pdcm"
        files[f"view_{j}"] = f"{name}/view_{j}.pdfm"
    return files


def write_dataset(out_dir, scenes, spec, generator: dict) -> dict:
    out = Path(out_dir)
    listing = []
    for scene in scenes:
        files = scene_files(scene.name, len(scene.cameras))
        codecs.write_artifact(out / files["cloud"], "cloud", scene.cloud)
        if scene.instances is not None:
            codecs.write_artifact(out / files["instances"], "partition",
                                  SuperVoxelPartition.from_labels(scene.instances))
        else:
            del files["instances"]
        codecs.write_artifact(out / files["partition"], "partition", scene.partition)
        for j, (cam, fmap, valid) in enumerate(scene.views):
            codecs.write_artifact(out / files[f"camera_{j}"], "camera", cam)
            codecs.write_artifact(out / files[f"view_{j}"], "feature_map", (fmap, valid))
        listing.append({"name": scene.name, "n_points": len(scene.cloud),
                        "n_views": len(scene.cameras), "files": files})
    return write_manifest(out, "dataset", {"spec": spec.to_dict(), "generator": generator,
                                           "n_classes": spec.n_classes, "scenes": listing})


def load_dataset(root, partitions=None):
    """Read a dataset directory back into :class:`Scene` objects.

    ``partitions`` optionally names a partition run directory whose
    ``<scene>.pdsv`` files replace the dataset's own partitions.
    """
    root = Path(root)
    manifest = read_manifest(root, "dataset")
    scenes = []
    for entry in manifest["scenes"]:
        files = entry["files"]
        cloud = codecs.read_artifact(root / files["cloud"], "cloud")
        instances = None
        if "instances" in files:
            instances = codecs.read_artifact(root / files["instances"], "partition").voxel_of
        if partitions is None:
            part = codecs.read_artifact(root / files["partition"], "partition")
        else:
            part = codecs.read_artifact(Path(partitions) / f"{entry['name']}.pdsv", "partition")
        cams, fmaps, valids = [], [], []
        for j in range(entry["n_views"]):
            cams.append(codecs.read_artifact(root / files[f"camera_{j}"], "camera"))
            fmap, valid = codecs.read_artifact(root / files[f"view_{j}"], "feature_map")
            fmaps.append(fmap)
            valids.append(valid)
        if part.n_points != len(cloud):
            raise codecs.CodecError(f"partition of {entry['name']} covers {part.n_points} points, "
                                    f"cloud has {len(cloud)}")
        scenes.append(Scene(entry["name"], cloud, cams, fmaps, valids, part, instances))
    return scenes, manifest


def ground_truth(scenes) -> np.ndarray:
    labels = [s.cloud.labels for s in scenes]
    if any(lab is None for lab in labels):
        raise ValueError("scenes lack ground-truth labels")
    return np.concatenate(labels)

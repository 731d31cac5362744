"""``pointdc`` command line.

Every subcommand takes ``--config FILE``, repeatable ``--set key=value``
and ``--seed N`` (applied in that order), writes its outputs plus
``config.cfg`` (the effective configuration) and ``manifest.json`` into
``--out``, and exits 0. Failures print one line to stderr::

    pointdc: error[<code>]: <message>

and exit 2 for usage errors, 1 for everything else.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import codecs, pipeline
from .config import ConfigError, RunConfig, describe_options
from .dataset import load_dataset, read_manifest, write_manifest
from .errors import PipelineError
from .featnet import NonFiniteGradientError
from .supervoxel import partition
from .synth import generate_dataset, surface_partition

SUBCOMMANDS = ("synth", "partition", "distill", "svc", "baseline", "eval", "probe")


class CliError(Exception):
    def __init__(self, code: str, message: str, status: int = 1):
        super().__init__(message)
        self.code, self.status = code, status


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        if "invalid choice" in message:
            raise CliError("unknown-subcommand", message, 2)
        if "unrecognized arguments" in message:
            raise CliError("unknown-flag", message, 2)
        raise CliError("usage", message, 2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pointdc", description="Unsupervised point cloud segmentation "
                     "by cross-modal distillation and super-voxel clustering.",
                     epilog="configuration keys:\n" + describe_options(),
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}",
                                parser_class=_Parser)
    sub.required = True

    def add(name, help_text, data=True, ckpt=False):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", type=Path, help="key = value configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one configuration key")
        p.add_argument("--seed", type=int, help="shorthand for --set seed=N")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        if data:
            p.add_argument("--data", type=Path, required=True, help="dataset directory")
            p.add_argument("--partitions", type=Path,
                           help="partition run directory overriding the dataset's partitions")
        if ckpt:
            p.add_argument("--checkpoint", type=Path, help="PDCK checkpoint file")
        return p

    add("synth", "generate the synthetic benchmark dataset", data=False)
    add("partition", "compute super-voxel partitions for a dataset")
    add("distill", "cross-modal distillation of the point network", ckpt=True)
    add("svc", "super-voxel clustering starting from a distilled checkpoint", ckpt=True)
    add("baseline", "point-level clustering baseline", ckpt=True)
    add("eval", "Hungarian-matched metrics of a checkpoint's predictions", ckpt=True)
    add("probe", "linear probe on a checkpoint's frozen point features", ckpt=True)
    return parser


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value
    cfg.update(overrides)
    if args.seed is not None:
        cfg.update({"seed": args.seed})
    return cfg


def _load(args):
    scenes, manifest = load_dataset(args.data, args.partitions)
    return scenes, manifest["n_classes"]


def _checkpoint(args, required=True):
    if args.checkpoint is None:
        if required:
            raise CliError("missing-checkpoint", "missing checkpoint: pass --checkpoint FILE")
        return None
    if not args.checkpoint.is_file():
        raise CliError("missing-checkpoint", f"missing checkpoint: {args.checkpoint} does not exist")
    return codecs.read_artifact(args.checkpoint, "checkpoint")


def _trace_text(trace) -> str:
    return "".join(f"{i} {loss!r}\n" for i, loss in enumerate(trace))


def cmd_synth(args, cfg):
    generate_dataset(pipeline.scene_spec(cfg), cfg.n_scenes, cfg.seed, args.out, cfg.feature_dim,
                     cfg.oracle_noise, cfg.oracle_nuisance, pipeline.partition_settings(cfg))
    return {"kind": "dataset"}


def cmd_partition(args, cfg):
    scenes, _ = _load(args)
    counts = {}
    for s in scenes:
        if cfg.partition_strategy == "surface_grid":
            if s.instances is None:
                raise ValueError(f"{s.name}: surface_grid needs instance ids in the dataset")
            part = surface_partition(s.cloud.xyz, s.instances, cfg.cell_size)
        else:
            part = partition(s.cloud, cfg.partition_strategy, cell_size=cfg.cell_size,
                             normal_deg=cfg.normal_deg, color_tol=cfg.color_tol,
                             min_size=cfg.min_size, split_cells=cfg.split_cells)
        codecs.write_artifact(args.out / f"{s.name}.pdsv", "partition", part)
        counts[s.name] = part.n_voxels
    return {"super_voxels": counts}


def cmd_distill(args, cfg):
    scenes, _ = _load(args)
    ckpt = _checkpoint(args, required=False)
    net = ckpt.net if ckpt else pipeline.new_network(cfg)
    trace = pipeline.distill(net, scenes, cfg)
    codecs.write_artifact(args.out / "checkpoint.pdck", "checkpoint", pipeline.checkpoint_from(net))
    (args.out / "loss_trace.txt").write_text(_trace_text(trace), encoding="utf-8")
    return {"final_loss": trace[-1] if trace else None}


def _iteration_text(result) -> str:
    return "".join(f"{r.iteration} kmeans_objective={r.kmeans_objective!r} "
                   f"mean_loss={r.mean_loss!r}\n" for r in result.iterations)


def cmd_svc(args, cfg):
    scenes, _ = _load(args)
    ckpt = _checkpoint(args)
    result = pipeline.run_svc(ckpt.net, scenes, pipeline.svc_config(cfg))
    codecs.write_artifact(args.out / "checkpoint.pdck", "checkpoint",
                          pipeline.checkpoint_from(ckpt.net, result))
    (args.out / "iterations.txt").write_text(_iteration_text(result), encoding="utf-8")
    return {}


def cmd_baseline(args, cfg):
    scenes, _ = _load(args)
    ckpt = _checkpoint(args, required=False)
    net = ckpt.net if ckpt else pipeline.new_network(cfg)
    result = pipeline.run_baseline_deepcluster(net, scenes, pipeline.baseline_config(cfg))
    codecs.write_artifact(args.out / "checkpoint.pdck", "checkpoint",
                          pipeline.checkpoint_from(net, result))
    (args.out / "iterations.txt").write_text(_iteration_text(result), encoding="utf-8")
    return {}


def cmd_eval(args, cfg):
    ckpt = _checkpoint(args)
    scenes, n_classes = _load(args)
    report = pipeline.evaluate_checkpoint(ckpt, scenes, n_classes)
    codecs.write_artifact(args.out / "metrics.txt", "report", report)
    return {"miou": report.miou}


def cmd_probe(args, cfg):
    ckpt = _checkpoint(args)
    scenes, n_classes = _load(args)
    _, report = pipeline.probe(ckpt.net, scenes, cfg, n_classes)
    report.extra.update(protocol="linear_probe", holdout=cfg.probe_holdout)
    codecs.write_artifact(args.out / "metrics.txt", "report", report)
    return {"accuracy": report.accuracy}


HANDLERS = {"synth": cmd_synth, "partition": cmd_partition, "distill": cmd_distill,
            "svc": cmd_svc, "baseline": cmd_baseline, "eval": cmd_eval, "probe": cmd_probe}


def dispatch(argv) -> int:
    args = build_parser().parse_args(argv)
    cfg = _config(args)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    data_dir = getattr(args, "data", None)
    if data_dir is not None:
        read_manifest(data_dir, "dataset")
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(cfg.to_text(), encoding="utf-8")
    summary = HANDLERS[args.command](args, cfg)
    if args.command != "synth":
        inputs = {"data": str(data_dir)}
        if getattr(args, "checkpoint", None) is not None:
            inputs["checkpoint"] = str(args.checkpoint)
        write_manifest(out, args.command, {"inputs": inputs, "summary": summary})
    return 0


_ERROR_CODES = (
    (codecs.CodecError, "malformed-file"),
    (ConfigError, "config"),
    (FileNotFoundError, "missing-input"),
    (NonFiniteGradientError, "non-finite"),
    (PipelineError, "pipeline"),
    (OSError, "io"),
    (ValueError, "invalid-input"),
)


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        return dispatch(argv)
    except CliError as exc:
        code, status, message = exc.code, exc.status, str(exc)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one line
        code = next((c for cls, c in _ERROR_CODES if isinstance(exc, cls)), "internal")
        status, message = 1, str(exc) or type(exc).__name__
    print(f"pointdc: error[{code}]: {_one_line(message)}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())

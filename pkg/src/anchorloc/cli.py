"""Command-line entry point.

Subcommands: ``anchors orthogonalize``, ``pseudo generate``,
``synth generate``, ``train``, ``eval``, ``report``.  Exit codes: 0 on
success, 1 on a domain error (the error name goes to stderr), 2 on usage
errors.  Config values resolve as CLI flag > config file > built-in
default, and every run writes the resolved snapshot into a
``run_manifest.json`` in its output directory, so a run is reproducible
from that file alone.  ``ANCHORLOC_OUT_ROOT`` provides the default output
root when ``--out`` is omitted.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, datagen, formats, reporting, trainer
from .anchors import RawEmbeddingMatrix, orthogonalize
from .errors import AnchorlocError
from .evaluation import EvalConfig, evaluate
from .pseudo import SamplerConfig, sample_fg_bg, to_patch_grid


def parse_kv_file(path) -> dict[str, str]:
    """Flat ``key = value`` config file; '#' starts a comment."""
    mapping: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        mapping[key.strip()] = value.strip()
    return mapping


def dataclass_from_kv(cls, mapping: dict):
    """Build a dataclass from string values, coercing by field annotation."""
    kwargs = {}
    by_name = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in mapping.items():
        if key not in by_name:
            raise ValueError(f"unknown {cls.__name__} key {key!r}")
        ann = by_name[key].type
        if isinstance(value, str):
            if ann == "bool":
                value = value.lower() in ("1", "true", "yes", "on")
            elif ann == "int":
                value = int(value)
            elif ann == "float":
                value = float(value)
        kwargs[key] = value
    return cls(**kwargs)


class UsageError(Exception):
    """Bad invocation detectable only after parsing; maps to exit code 2."""


def _resolve_out(out, subcommand: str) -> Path:
    if out is not None:
        return Path(out)
    root = os.environ.get("ANCHORLOC_OUT_ROOT")
    if root is None:
        raise UsageError("--out is required (or set ANCHORLOC_OUT_ROOT)")
    return Path(root) / subcommand


def _write_run_manifest(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = dict(payload, tool_version=__version__)
    formats._write_atomic(
        out_dir / "run_manifest.json",
        (json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n").encode(),
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anchorloc",
        description="Patch-level localization and classification from class anchors.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    anchors_p = sub.add_parser("anchors", help="anchor-file operations")
    anchors_sub = anchors_p.add_subparsers(dest="action", required=True)
    orth = anchors_sub.add_parser(
        "orthogonalize", help="replace anchor rows by an orthonormal basis"
    )
    orth.add_argument("--in", dest="in_path", required=True, help="input anchor file")
    orth.add_argument("--out", dest="out_path", required=True, help="output anchor file")

    pseudo_p = sub.add_parser("pseudo", help="pseudo-label operations")
    pseudo_sub = pseudo_p.add_subparsers(dest="action", required=True)
    pgen = pseudo_sub.add_parser(
        "generate", help="sample balanced FG/BG patches from CAM files"
    )
    pgen.add_argument("--cams", required=True, help="directory of CAM files")
    pgen.add_argument("--patch-grid", required=True, help="patch grid as RxC")
    pgen.add_argument("--out", default=None)
    pgen.add_argument("--seed", type=int, default=0)
    pgen.add_argument("--n-fg", type=float, default=0.2)
    pgen.add_argument("--n-bg", type=float, default=0.2)
    pgen.add_argument("--per-side", type=int, default=10)
    pgen.add_argument("--bins", type=int, default=256)

    synth_p = sub.add_parser("synth", help="synthetic dataset operations")
    synth_sub = synth_p.add_subparsers(dest="action", required=True)
    sgen = synth_sub.add_parser("generate", help="write a synthetic dataset")
    sgen.add_argument("--config", default=None, help="key = value config file")
    sgen.add_argument("--out", default=None)
    sgen.add_argument("--seed", type=int, default=None, help="override config seed")

    train_p = sub.add_parser("train", help="train decoder and patch classifier")
    train_p.add_argument("--manifest", required=True)
    train_p.add_argument("--anchors", required=True, help="anchor file (TDLA)")
    train_p.add_argument("--config", default=None, help="key = value config file")
    train_p.add_argument("--out", default=None)
    train_p.add_argument("--resume", default=None, help="checkpoint to resume from")
    for flag, key, kind in (
        ("--lambda-kd", "lambda_kd", float),
        ("--lambda-pcl", "lambda_pcl", float),
        ("--lambda-icl", "lambda_icl", float),
        ("--lr", "learning_rate", float),
        ("--epochs", "epochs", int),
        ("--batch-size", "batch_size", int),
        ("--seed", "seed", int),
        ("--upscale", "upscale", int),
        ("--embed-dim", "embed_dim", int),
        ("--temperature", "temperature", float),
        ("--encoder", "encoder", str),
    ):
        train_p.add_argument(flag, dest=f"cfg_{key}", type=kind, default=None)

    eval_p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    eval_p.add_argument("--checkpoint", required=True)
    eval_p.add_argument("--manifest", required=True)
    eval_p.add_argument("--report", required=True, help="output report JSON path")
    eval_p.add_argument("--split", default="test", choices=("train", "val", "test"))
    eval_p.add_argument("--map-resolution", type=int, default=256, help="0 keeps native size")
    eval_p.add_argument(
        "--patch-text-map",
        action="store_true",
        help="also run the label-consuming patch-anchor diagnostic",
    )
    eval_p.add_argument("--jobs", type=int, default=1)

    report_p = sub.add_parser("report", help="figures from an evaluation report")
    report_p.add_argument("--report", required=True)
    report_p.add_argument("--out", default=None)
    report_p.add_argument("--plot", action="store_true")
    report_p.add_argument("--checkpoint", default=None, help="for heatmap overlays")
    report_p.add_argument("--manifest", default=None)
    report_p.add_argument("--split", default="test")
    report_p.add_argument("--limit", type=int, default=6)
    return parser


def _cmd_anchors_orthogonalize(args) -> dict:
    loaded = formats.load_anchors(args.in_path, normalize_rows=False)
    raw = RawEmbeddingMatrix(loaded.anchors, loaded.class_names)
    formats.save_anchors(args.out_path, orthogonalize(raw))
    return {
        "inputs": {"anchors": args.in_path},
        "outputs": {"anchors": args.out_path},
        "config": {"num_classes": raw.num_classes, "dim": raw.dim},
        "seed": None,
        "out_dir": Path(args.out_path).parent,
    }


def _cmd_pseudo_generate(args) -> dict:
    rows, _, cols = args.patch_grid.lower().partition("x")
    grid_shape = (int(rows), int(cols))
    sampler = SamplerConfig(
        n_fg=args.n_fg,
        n_bg=args.n_bg,
        samples_per_side=args.per_side,
        histogram_bins=args.bins,
    )
    out_dir = _resolve_out(args.out, "pseudo")
    out_dir.mkdir(parents=True, exist_ok=True)
    cam_paths = sorted(Path(args.cams).glob("*.tdlm"))
    if not cam_paths:
        raise AnchorlocError(f"no .tdlm files in {args.cams}")
    for index, cam_path in enumerate(cam_paths):
        pooled = to_patch_grid(formats.load_cam(cam_path), *grid_shape)
        rng = np.random.default_rng(np.random.SeedSequence([args.seed, index]))
        sampled = sample_fg_bg(pooled, sampler, rng)
        payload = {
            "image_id": cam_path.stem,
            "grid": list(grid_shape),
            "locations": [list(loc) for loc in sampled.locations],
            "labels": sampled.labels.tolist(),
        }
        formats._write_atomic(
            out_dir / f"{cam_path.stem}.json",
            (json.dumps(payload) + "\n").encode(),
        )
    return {
        "inputs": {"cams": args.cams},
        "outputs": {"samples": str(out_dir)},
        "config": dataclasses.asdict(sampler) | {"patch_grid": list(grid_shape)},
        "seed": args.seed,
        "out_dir": out_dir,
    }


def _cmd_synth_generate(args) -> dict:
    mapping = parse_kv_file(args.config) if args.config else {}
    if args.seed is not None:
        mapping["seed"] = args.seed
    cfg = dataclass_from_kv(datagen.SynthConfig, mapping)
    out_dir = _resolve_out(args.out, "synth")
    result = datagen.generate(cfg, out_dir)
    return {
        "inputs": {"config": args.config},
        "outputs": {k: str(v) for k, v in result.items()},
        "config": dataclasses.asdict(cfg),
        "seed": cfg.seed,
        "out_dir": out_dir,
    }


def _cmd_train(args) -> dict:
    mapping = parse_kv_file(args.config) if args.config else {}
    for key in (
        "lambda_kd lambda_pcl lambda_icl learning_rate epochs batch_size "
        "seed upscale embed_dim temperature encoder".split()
    ):
        value = getattr(args, f"cfg_{key}")
        if value is not None:
            mapping[key] = value
    cfg = trainer.TrainConfig.from_mapping(mapping)
    out_dir = _resolve_out(args.out, "train")
    result = trainer.train(
        args.manifest, args.anchors, cfg, out_dir, resume_from=args.resume
    )
    print(
        f"trained {result.steps} steps; best val MaxBoxAcc "
        f"{result.best_val:.4f} at epoch {result.best_epoch}"
    )
    return {
        "inputs": {"manifest": args.manifest, "anchors": args.anchors,
                   "resume": args.resume},
        "outputs": {
            "best_checkpoint": str(result.best_checkpoint),
            "last_checkpoint": str(result.last_checkpoint),
            "log": str(result.log_path),
        },
        "config": dataclasses.asdict(cfg),
        "seed": cfg.seed,
        "out_dir": out_dir,
    }


def _cmd_eval(args) -> dict:
    resolution = None if args.map_resolution == 0 else (args.map_resolution,) * 2
    cfg = EvalConfig(map_resolution=resolution)
    report = evaluate(
        args.checkpoint,
        args.manifest,
        cfg,
        split=args.split,
        include_patch_text=args.patch_text_map,
        jobs=args.jobs,
    )
    report.save(args.report)
    print(
        f"MaxBoxAcc {report.maxboxacc:.4f}  Top-1 Loc {report.top1_loc:.4f}  "
        f"Top-5 Loc {report.top5_loc:.4f}  Top-1 Cls {report.top1_cls:.4f}"
    )
    return {
        "inputs": {"checkpoint": args.checkpoint, "manifest": args.manifest},
        "outputs": {"report": args.report},
        "config": {
            "split": args.split,
            "map_resolution": resolution,
            "patch_text_map": args.patch_text_map,
            "jobs": args.jobs,
        },
        "seed": None,
        "out_dir": Path(args.report).parent,
    }


def _cmd_report(args) -> dict:
    report = reporting.load_report(args.report)
    out_dir = _resolve_out(args.out, "report") if (args.out or args.plot) else Path(args.report).parent
    outputs = {}
    if args.plot:
        curve_path = reporting.plot_threshold_curve(report, out_dir / "threshold_curve.png")
        outputs["curve_plot"] = str(curve_path)
        if args.checkpoint and args.manifest:
            overlays = reporting.plot_heatmap_overlays(
                args.checkpoint, args.manifest, out_dir / "overlays",
                split=args.split, limit=args.limit,
            )
            outputs["overlays"] = [str(p) for p in overlays]
    print(json.dumps({k: report[k] for k in ("maxboxacc", "top1_loc", "top5_loc", "top1_cls")}))
    return {
        "inputs": {"report": args.report, "checkpoint": args.checkpoint},
        "outputs": outputs,
        "config": {"plot": args.plot, "split": args.split, "limit": args.limit},
        "seed": None,
        "out_dir": out_dir,
    }


_HANDLERS = {
    ("anchors", "orthogonalize"): _cmd_anchors_orthogonalize,
    ("pseudo", "generate"): _cmd_pseudo_generate,
    ("synth", "generate"): _cmd_synth_generate,
    ("train", None): _cmd_train,
    ("eval", None): _cmd_eval,
    ("report", None): _cmd_report,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for usage errors
        return int(exc.code or 0)
    handler = _HANDLERS[(args.command, getattr(args, "action", None))]
    started = time.time()
    try:
        summary = handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except AnchorlocError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    out_dir = Path(summary.pop("out_dir"))
    _write_run_manifest(
        out_dir,
        {
            "subcommand": args.command
            + ("" if getattr(args, "action", None) is None else f" {args.action}"),
            "duration_seconds": round(time.time() - started, 3),
            **summary,
        },
    )
    return 0


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()

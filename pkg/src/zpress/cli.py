"""Command-line entry point.

Exit status is 0 on success, 2 for usage or configuration problems (bad
flags, unreadable or invalid config, malformed pose file) and 1 for failures
while running. Every command writes its outputs plus ``manifest.json`` under
``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, testbed
from .errors import ConfigError, InvalidInput, ZPressError
from .geometry import PoseFileError, poses_from_json
from .pipeline import Checkpoint, PipelineConfig, evaluate, init_checkpoint, predict_scene, train, write_metrics
from .scene import Image, write_ppm
from .splat import render_set

log = logging.getLogger("zpress")

EXPERIMENTS = {
    "scaling": bench.cmd_scaling,
    "sweep": bench.cmd_anchor_sweep,
    "ablate": bench.cmd_ablate,
    "strategies": bench.cmd_strategies,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def build_parser():
    parser = _Parser(prog="zpress", description="Train, evaluate and benchmark view-compressing splat models.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed(s)")
        return p

    common(sub.add_parser("scaling", help="primitive count, time and memory versus K"))
    common(sub.add_parser("sweep", help="held-out PSNR versus number of anchors"))
    common(sub.add_parser("ablate", help="fusion-mode, block and beta ablations"))
    common(sub.add_parser("strategies", help="anchor-selection strategies"))
    common(sub.add_parser("train", help="train one model"))
    p = common(sub.add_parser("eval", help="evaluate a checkpoint on held-out scenes"), config_required=False)
    p.add_argument("--checkpoint", required=True)
    p = common(sub.add_parser("render", help="render views from a checkpoint as PPM"), config_required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--poses", help="pose JSON file; default: the scene's held-out targets")
    p.add_argument("--scene", type=int, default=0, help="evaluation scene index")
    return parser


def _read_json(path):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: line {exc.lineno}: invalid JSON: {exc.msg}") from exc
    except OSError as exc:
        raise ConfigError(f"{p}: {exc}") from exc


def _pipeline_config(path, seed, fallback=None):
    if path is None:
        if fallback is None:
            raise ConfigError("--config is required")
        cfg = fallback
    else:
        try:
            cfg = PipelineConfig.from_dict(_read_json(path))
        except ConfigError as exc:
            raise ConfigError(f"{path}: {exc}") if str(path) not in str(exc) else exc
    return cfg if seed is None else cfg.replace(seed=seed)


def _run_experiment(args, out):
    try:
        spec = bench.ExperimentSpec.from_dict(_read_json(args.config), out_dir=out)
    except ConfigError as exc:
        raise ConfigError(f"{args.config}: {exc}") if str(args.config) not in str(exc) else exc
    if args.seed is not None:
        spec = spec.with_seeds([args.seed])
    result = EXPERIMENTS[args.command](spec, out_dir=out)
    files = [result[0]] + sorted(out.glob("*_summary.json"))
    if len(result) > 2:
        print(json.dumps(result[2], indent=2, sort_keys=True))
    return spec.to_dict(), files, spec.seeds[0] if len(spec.seeds) == 1 else None


def _run_train(args, out):
    cfg = _pipeline_config(args.config, args.seed)
    ckpt, rows = train(cfg, on_row=lambda r: log.info("step %d task %.5f kl %.2f", r.step, r.task, r.kl))
    ck = ckpt.save(out / "checkpoint.zptn")
    write_metrics(out / "metrics.csv", rows)
    return cfg.to_dict(), [ck, Path(str(ck) + ".json"), out / "metrics.csv"], cfg.seed


def _load_checkpoint(path):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"checkpoint not found: {p}")
    return Checkpoint.load(p)


def _run_eval(args, out):
    ckpt = _load_checkpoint(args.checkpoint)
    cfg = _pipeline_config(args.config, args.seed, fallback=ckpt.config)
    res = evaluate(ckpt, cfg)
    path = out / "eval.json"
    path.write_text(json.dumps(res.summary(), indent=2, sort_keys=True) + "\n")
    print(json.dumps(res.summary(), sort_keys=True))
    return cfg.to_dict(), [path], cfg.seed


def _run_render(args, out):
    ckpt = _load_checkpoint(args.checkpoint)
    cfg = _pipeline_config(args.config, args.seed, fallback=ckpt.config)
    spec = cfg.data_spec
    sample = testbed.scene_sample(spec, testbed.EVAL_NAMESPACE, args.scene)
    if args.poses:
        pose_path = Path(args.poses)
        if not pose_path.is_file():
            raise ConfigError(f"pose file not found: {pose_path}")
        try:
            poses = poses_from_json(pose_path.read_text())
        except PoseFileError as exc:
            raise ConfigError(f"{pose_path}: {exc}") from exc
        if not poses:
            raise ConfigError(f"{pose_path}: no poses")
    else:
        poses = [p for _, p in testbed.eval_targets(spec, sample, cfg.target_views)]
    gs = predict_scene(list(sample.views), list(sample.poses), cfg, ckpt)
    files = []
    for i, pose in enumerate(poses):
        img = render_set(gs, [pose], pose.height, pose.width, sample.scene.background)[0]
        path = out / f"view_{i:03d}.ppm"
        write_ppm(path, Image(img.astype(np.float64)))
        files.append(path)
    config = {"pipeline": cfg.to_dict(), "scene": args.scene, "checkpoint": str(args.checkpoint)}
    if args.poses:
        config["poses"] = json.loads(Path(args.poses).read_text())
    return config, files, cfg.seed


def cli_main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"zpress: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    out = Path(args.out)
    try:
        if args.command in EXPERIMENTS and not Path(args.config).is_file():
            raise ConfigError(f"config file not found: {args.config}")
        out.mkdir(parents=True, exist_ok=True)
        runner = {"train": _run_train, "eval": _run_eval, "render": _run_render}.get(args.command, _run_experiment)
        config, files, seed = runner(args, out)
        bench.write_manifest(out, args.command, config, files, seed=seed)
    except (ConfigError, PoseFileError) as exc:
        print(f"zpress: config error: {exc}", file=sys.stderr)
        return 2
    except (ZPressError, InvalidInput, OSError, FloatingPointError, ValueError) as exc:
        print(f"zpress: {args.command} failed: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(cli_main())

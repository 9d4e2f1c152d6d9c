"""Command-line entry points.

  splatpm run <config.json>            full experiment, artifacts on disk
  splatpm render <scene> <cam> <out>   render one rig camera to a PPM
  splatpm eval <sceneA> <sceneB>       compare two scene files over the rig
  splatpm bench                        time the kernel backends
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .core import load_scene_file
from .errors import ConfigError, SplatError
from .harness import ExperimentConfig, build_camera_ring, resolve_output_dir, run_experiment
from .imageio import write_ppm
from .metrics import psnr, ssim
from .render import render


def _cmd_run(args) -> int:
    config = ExperimentConfig.from_json_file(args.config)
    out_dir = args.out or config.output_dir or "runs/experiment"
    result = run_experiment(config, output_dir=resolve_output_dir(out_dir))
    print(json.dumps(result.report.to_dict(), indent=2, sort_keys=True))
    return 0


def _rig_from_args(args):
    if args.config:
        cfg = ExperimentConfig.from_json_file(args.config)
        return build_camera_ring(cfg.cameras), cfg.background
    cfg = ExperimentConfig()
    return build_camera_ring(cfg.cameras), cfg.background


def _cmd_render(args) -> int:
    cameras, background = _rig_from_args(args)
    if not (0 <= args.camera_index < len(cameras)):
        raise ConfigError(f"camera index {args.camera_index} outside rig of {len(cameras)}")
    scene = load_scene_file(args.scene)
    out = render(scene, cameras[args.camera_index], background)
    write_ppm(args.out, out.color)
    print(f"wrote {args.out}")
    return 0


def _cmd_eval(args) -> int:
    cameras, background = _rig_from_args(args)
    scene_a = load_scene_file(args.scene_a)
    scene_b = load_scene_file(args.scene_b)
    rows = []
    for i, cam in enumerate(cameras):
        img_a = render(scene_a, cam, background).color
        img_b = render(scene_b, cam, background).color
        rows.append({"view": i, "psnr": psnr(img_a, img_b), "ssim": ssim(img_a, img_b)})
    summary = {
        "per_view": rows,
        "psnr_mean": float(np.mean([r["psnr"] for r in rows])),
        "ssim_mean": float(np.mean([r["ssim"] for r in rows])),
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_bench(args) -> int:
    from .bench import run_benchmark

    report = run_benchmark(points=args.points, width=args.width, height=args.height, repeats=args.repeats)
    print(report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splatpm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="output directory (default from config)")
    p_run.set_defaults(func=_cmd_run)

    p_render = sub.add_parser("render", help="render a scene file from a rig camera")
    p_render.add_argument("scene")
    p_render.add_argument("camera_index", type=int)
    p_render.add_argument("out")
    p_render.add_argument("--config", help="experiment config defining the rig")
    p_render.set_defaults(func=_cmd_render)

    p_eval = sub.add_parser("eval", help="PSNR/SSIM between two scene files over the rig")
    p_eval.add_argument("scene_a")
    p_eval.add_argument("scene_b")
    p_eval.add_argument("--config", help="experiment config defining the rig")
    p_eval.set_defaults(func=_cmd_eval)

    p_bench = sub.add_parser("bench", help="time the compiled and python kernels")
    p_bench.add_argument("--points", type=int, default=300)
    p_bench.add_argument("--width", type=int, default=64)
    p_bench.add_argument("--height", type=int, default=64)
    p_bench.add_argument("--repeats", type=int, default=20)
    p_bench.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SplatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``roadspeed {run,synth,mask,bench}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline, preprocess, synth
from .errors import ConfigError, RoadspeedError
from .imgcore import write_pnm


def _flag(key: str) -> str:
    return "--" + key.replace(".", "-").replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value configuration file")
    for key in pipeline.CONFIG_KEYS:
        if key == "dump_stages":
            p.add_argument(_flag(key), dest=key, action="store_const", const="true",
                           help="write every intermediate stage as PNM")
        else:
            p.add_argument(_flag(key), dest=key, metavar="VALUE", help=f"override '{key}'")


def _config_from(args) -> pipeline.PipelineConfig:
    overrides = {k: getattr(args, k) for k in pipeline.CONFIG_KEYS if getattr(args, k) is not None}
    if args.config is not None:
        return pipeline.load_config(args.config, overrides)
    return pipeline.apply_overrides(pipeline.PipelineConfig(), overrides)


def cmd_run(args) -> int:
    cfg = _config_from(args)
    if cfg.v0 is None:
        raise ConfigError("v0 (calibration constant) is required for run")
    summary = pipeline.run(cfg)
    print(summary.as_text(), end="")
    return 0


def cmd_synth(args) -> int:
    try:
        text = args.spec.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read scene spec {args.spec}: {exc.strerror}") from None
    spec = synth.parse_scene_spec(text)
    frames, truth = synth.generate_scene(spec)
    out = args.output_dir
    out.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        write_pnm(out / f"frame_{i:06d}.pnm", f)
    synth.write_truth_csv(out / "truth.csv", truth)
    print(f"wrote {len(frames)} frames and truth.csv to {out}")
    return 0


def cmd_mask(args) -> int:
    cfg = _config_from(args)
    if cfg.mask_polygon is None:
        raise ConfigError("mask.polygon is required")
    if cfg.input_dir is not None:
        first = pipeline.read_frame(pipeline.list_frames(cfg.input_dir)[0])
        width, height = first.width, first.height
    else:
        width, height = args.width, args.height
    mask = preprocess.rasterize_mask(cfg.mask_polygon, width, height)
    out = args.output or (Path(cfg.output_dir or ".") / "mask.pnm")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_pnm(out, mask.to_image())
    print(f"wrote {width}x{height} mask to {out}")
    return 0


def cmd_bench(args) -> int:
    report = pipeline.bench(_config_from(args))
    print(report.as_table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roadspeed", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="detect, track and measure vehicles in a frame directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="render a synthetic scene and its ground truth")
    p.add_argument("spec", type=Path, help="scene spec file")
    p.add_argument("--output-dir", type=Path, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mask", help="rasterize the configured road polygon to a P5 mask")
    _add_config_flags(p)
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--output", type=Path)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("bench", help="per-stage latency report")
    _add_config_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (RoadspeedError, OSError) as exc:
        print(f"roadspeed: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

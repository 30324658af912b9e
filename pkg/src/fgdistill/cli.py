"""Command-line harness: train, gradcheck, masks, sweep.

Exit codes: 0 success, 1 failed gradient checks, 2 invalid config or
arguments, 3 non-finite training loss.  Diagnostics go to stderr, progress
to stdout; FGD_LOG_LEVEL in {error, info, debug} controls verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from .checkpoint import CheckpointError, load_checkpoint
from .config import RunConfig, load_config
from .errors import ConfigError, NonFiniteLossError, ParameterError
from .fileio import atomic_write_text, format_float
from .masks import read_box_file
from .runner import build_state, distill_run, dump_masks, restore_parameters, scene_pool
from .verification import SCOPES, run_checks

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_BAD_CONFIG = 2
EXIT_NON_FINITE = 3

logger = logging.getLogger("fgdistill")

SWEEPABLE = ("temperature", "alpha", "beta", "gamma", "lambda")


def _setup_logging():
    level_name = os.environ.get("FGD_LOG_LEVEL", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level_name not in levels:
        print(f"FGD_LOG_LEVEL must be one of {sorted(levels)}", file=sys.stderr)
        level_name = "error"
    logging.basicConfig(
        level=levels[level_name],
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load_config(args) -> RunConfig:
    config = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        config = replace(config, seed=args.seed)
    if getattr(args, "out", None) is not None:
        config = replace(config, out_dir=args.out)
    return config


def cmd_train(args) -> int:
    try:
        config = _load_config(args)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    try:
        result = distill_run(config, progress=print)
    except NonFiniteLossError as exc:
        print(f"non-finite loss: {exc}", file=sys.stderr)
        logger.error("diagnostic dump: %s", exc.dump)
        return EXIT_NON_FINITE
    print(f"run complete: {result.metrics_path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_checks(args.scope, seed=args.seed if args.seed is not None else 20240)
    failures = []
    for r in results:
        print(r.line())
        if not r.passed:
            failures.append(r.name)
    if failures:
        print(f"FAILED checks: {', '.join(failures)}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    print(f"all {len(results)} gradient checks passed")
    return EXIT_OK


def cmd_masks(args) -> int:
    try:
        config = _load_config(args)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    state = build_state(config)
    if args.checkpoint is not None:
        try:
            restore_parameters(state, load_checkpoint(args.checkpoint))
        except CheckpointError as exc:
            print(f"cannot use checkpoint: {exc}", file=sys.stderr)
            return EXIT_BAD_CONFIG
    scene = scene_pool(config)[0]
    if args.boxes is not None:
        try:
            boxes = read_box_file(args.boxes)
        except (OSError, ParameterError) as exc:
            print(f"cannot read box file: {exc}", file=sys.stderr)
            return EXIT_BAD_CONFIG
        if boxes.image_size != (config.image_size, config.image_size):
            print(
                f"box file image size {boxes.image_size} does not match "
                f"configured {config.image_size}",
                file=sys.stderr,
            )
            return EXIT_BAD_CONFIG
        scene.boxes = boxes
    out = os.path.join(config.out_dir, "mask_dump")
    dump_masks(state, scene, config.temperature, out)
    print(f"masks written to {out}")
    return EXIT_OK


def _sweep_configs(config: RunConfig, param: str, values: list[float]):
    for value in values:
        if param == "temperature":
            yield value, replace(config, temperature=value)
        else:
            key = "lambda_" if param == "lambda" else param
            yield value, replace(config, **{key: value})


def cmd_sweep(args) -> int:
    try:
        config = _load_config(args)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    if args.param not in SWEEPABLE:
        print(f"--param must be one of {SWEEPABLE}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    try:
        values = [float(v) for v in args.values.split(",") if v.strip() != ""]
    except ValueError:
        print(f"cannot parse --values {args.values!r}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    if not values:
        print("--values must name at least one value", file=sys.stderr)
        return EXIT_BAD_CONFIG

    summary = ["value,fea_fg,fea_bg,attention,focal,global,task,total"]
    for value, run_config in _sweep_configs(config, args.param, values):
        run_config = replace(
            run_config,
            out_dir=os.path.join(config.out_dir, f"{args.param}_{value:g}"),
        )
        try:
            result = distill_run(run_config)
        except NonFiniteLossError as exc:
            print(f"non-finite loss in sweep value {value}: {exc}", file=sys.stderr)
            return EXIT_NON_FINITE
        print(f"{args.param}={value:g} done -> {result.out_dir}")
        if result.rows:
            last = result.rows[-1][1]
            fields = (last.fea_fg, last.fea_bg, last.attention, last.focal,
                      last.global_, last.task, last.total)
        else:
            fields = (0.0,) * 7
        summary.append(
            ",".join([format_float(value)] + [format_float(v) for v in fields])
        )
    summary_path = os.path.join(config.out_dir, "sweep_summary.csv")
    atomic_write_text(summary_path, "\n".join(summary) + "\n")
    print(f"sweep summary: {summary_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fgdistill",
        description="Toy-scale focal and global feature distillation experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run one distillation training job")
    train.add_argument("--config", required=True, help="path to key = value config")
    train.add_argument("--seed", type=int, default=None, help="override config seed")
    train.add_argument("--out", default=None, help="override output directory")
    train.set_defaults(func=cmd_train)

    check = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    check.add_argument("--scope", choices=SCOPES, default="all")
    check.add_argument("--seed", type=int, default=None)
    check.set_defaults(func=cmd_gradcheck)

    masks = sub.add_parser("masks", help="dump mask grids for one scene")
    masks.add_argument("--config", required=True)
    masks.add_argument("--seed", type=int, default=None, help="scene/run seed override")
    masks.add_argument("--out", default=None)
    masks.add_argument("--checkpoint", default=None, help="student checkpoint to load")
    masks.add_argument(
        "--boxes", default=None, help="box file overriding the generated scene's boxes"
    )
    masks.set_defaults(func=cmd_masks)

    sweep = sub.add_parser("sweep", help="run one job per value of one hyper-parameter")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--param", required=True, help=f"one of {SWEEPABLE}")
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument("--seed", type=int, default=None)
    sweep.add_argument("--out", default=None)
    sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG


if __name__ == "__main__":
    sys.exit(main())

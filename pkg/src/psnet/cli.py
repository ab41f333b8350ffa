from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence

from .config import load_config
from .exceptions import PSNetError

logger = logging.getLogger("psnet")


def _train(args: argparse.Namespace) -> int:
    from .training import train_stage

    config = load_config(args.config)
    spec = config.stages[args.stage]
    checkpoint = train_stage(spec, config, resume=args.resume, progress=args.progress)
    print(checkpoint.path)
    return 0


def _infer(args: argparse.Namespace) -> int:
    from .inference import infer

    source = (args.input, args.flow) if args.flow else args.input
    written = infer(
        args.ckpt,
        source,
        args.output,
        dump_importance=args.dump_importance,
        save_branches=args.save_branches,
        single_stream=args.single_stream,
        progress=args.progress,
    )
    print(f"{len(written)} maps written to {args.output}")
    return 0


def _eval(args: argparse.Namespace) -> int:
    from .metrics import evaluate_dataset
    from .report import render_report, write_report

    report = evaluate_dataset(args.pred, args.gt)
    write_report(report, args.report, workbook=args.xlsx)
    print(render_report(report), end="")
    return 0


def _synth(args: argparse.Namespace) -> int:
    from .synthetic import load_clip_specs, write_dataset

    written = write_dataset(load_clip_specs(args.spec), args.output)
    print(f"{len(written)} clips written to {args.output}")
    return 0


def _overlay(args: argparse.Namespace) -> int:
    from .inference import overlay

    written = overlay(args.pred, args.rgb, args.output, alpha=args.alpha)
    print(f"{len(written)} overlays written to {args.output}")
    return 0


def _info(args: argparse.Namespace) -> int:
    from .inference import measure_fps
    from .network import PSNet, count_parameters

    config = load_config(args.config)
    model = PSNet(config.model)
    print(f"ablation: {config.model.ablation.value}")
    for name, count in count_parameters(model).items():
        print(f"{name:>16}: {count:>12,d} ({count / 1e6:.2f} M)")
    if args.fps_frames > 0:
        fps = measure_fps(model, config.model.input_size, args.fps_frames)
        h, w = config.model.input_size
        print(f"{'fps':>16}: {fps:.2f} at {h}x{w}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="psnet", description="Two-stream video salient object detection"
    )
    parser.add_argument(
        "--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"]
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--config", required=True, help="YAML config file")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--progress", action="store_true", help="show a progress bar")
    p.set_defaults(func=_train)

    p = sub.add_parser("infer", help="write saliency maps for a dataset tree or one frame pair")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True,
                   help="dataset root, sequence directory, or RGB image with --flow")
    p.add_argument("--flow", help="flow image paired with the RGB image given as --input")
    p.add_argument("--output", required=True)
    p.add_argument("--dump-importance", action="store_true",
                   help="write importance weight statistics per frame")
    p.add_argument("--save-branches", action="store_true",
                   help="also write the appearance and motion branch maps")
    p.add_argument("--single-stream", action="store_true",
                   help="accept a stage-1 or stage-2 checkpoint")
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--report", required=True, help="text report path; JSON is written next to it")
    p.add_argument("--xlsx", action="store_true", help="also write an .xlsx workbook")
    p.set_defaults(func=_eval)

    p = sub.add_parser("synth", help="generate synthetic clips")
    p.add_argument("--spec", required=True, help="YAML clip spec file")
    p.add_argument("--output", required=True)
    p.set_defaults(func=_synth)

    p = sub.add_parser("overlay", help="blend saliency maps onto RGB frames")
    p.add_argument("--pred", required=True)
    p.add_argument("--rgb", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.set_defaults(func=_overlay)

    p = sub.add_parser("info", help="print parameter counts and inference speed")
    p.add_argument("--config", required=True)
    p.add_argument("--fps-frames", type=int, default=0)
    p.set_defaults(func=_info)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except PSNetError as e:
        logger.error("%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())

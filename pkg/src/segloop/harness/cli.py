"""Command-line interface.

Subcommands: ``phantom`` (emit a synthetic dataset), ``prompts`` (emit one
iteration's prompt records), ``simulate`` (run an experiment from a config
file), ``metrics`` (score two mask files), ``convert`` (NIfTI <-> native).

Exit codes: 0 success, 1 usage error, 2 data error, 3 session failures
present.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from ..errors import SegloopError
from ..metrics import report
from ..prompts import PromptConfig, build_prompt_set, serialize_prompt_set
from ..rng import Rng
from ..volume import read_volume, write_volume
from .experiment import ExperimentConfig, run_experiment
from .phantom import PhantomSpec, generate_phantom

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_SESSION_FAILURES = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(self.exit_code if hasattr(self, "exit_code") else EXIT_USAGE)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="segloop",
                     description="Iterative prompt-driven segmentation harness")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", help="generate a phantom dataset")
    p.add_argument("--spec", help="PhantomSpec JSON file (defaults apply if omitted)")
    p.add_argument("--count", type=int, help="override subject count")
    p.add_argument("--seed", type=int, help="override the spec seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--container", choices=["vgh", "nii"], default="vgh")

    p = sub.add_parser("prompts", help="emit one iteration's prompt records")
    p.add_argument("--gt", required=True, help="ground-truth mask (.vgh/.nii)")
    p.add_argument("--pred", help="previous prediction (omit for iteration 0)")
    p.add_argument("--iteration", type=int, default=0)
    p.add_argument("--config", help="PromptConfig JSON file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output file (stdout if omitted)")

    p = sub.add_parser("simulate", help="run an experiment from a config file")
    p.add_argument("--config", required=True, help="ExperimentConfig JSON file")
    p.add_argument("--out", help="override output directory")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--workers", type=int, help="override worker count")
    p.add_argument("--format", choices=["ndjson", "csv"], default="ndjson",
                   help="summary format printed to stdout")

    p = sub.add_parser("metrics", help="score two mask files")
    p.add_argument("mask_a")
    p.add_argument("mask_b")
    p.add_argument("--tolerance-mm", type=float, default=1.0)
    p.add_argument("--format", choices=["ndjson", "csv"], default="ndjson")

    p = sub.add_parser("convert", help="convert between NIfTI and native volumes")
    p.add_argument("src")
    p.add_argument("dst")
    return parser


def _cmd_phantom(args) -> int:
    spec_dict = {}
    if args.spec:
        with open(args.spec, "r", encoding="utf-8") as fh:
            spec_dict = json.load(fh)
    spec = PhantomSpec.from_dict(spec_dict)
    if args.count is not None:
        spec.count = args.count
    if args.seed is not None:
        spec.seed = args.seed
    os.makedirs(args.out, exist_ok=True)
    manifest = os.path.join(args.out, "manifest.ndjson")
    with open(manifest, "w", encoding="utf-8") as fh:
        for i in range(spec.count):
            image, gt = generate_phantom(spec, i)
            sid = f"phantom_{i:03d}"
            image_path = os.path.join(args.out, f"{sid}_image.{args.container}")
            label_path = os.path.join(args.out, f"{sid}_label.{args.container}")
            write_volume(image, image_path)
            write_volume(gt, label_path)
            fh.write(json.dumps({"id": sid, "image": os.path.basename(image_path),
                                 "label": os.path.basename(label_path),
                                 "gt_voxels": gt.voxel_count},
                                sort_keys=True, separators=(",", ":")) + "\n")
    print(f"wrote {spec.count} phantoms to {args.out}")
    return EXIT_OK


def _cmd_prompts(args) -> int:
    gt = read_volume(args.gt, as_mask=True)
    pred = read_volume(args.pred, as_mask=True) if args.pred else None
    cfg_dict = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg_dict = json.load(fh)
    cfg = PromptConfig.from_dict(cfg_dict)
    seed = args.seed if args.seed is not None else (cfg.seed or 0)
    ps = build_prompt_set(gt, pred, cfg, args.iteration, Rng(seed))
    text = serialize_prompt_set(ps)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_simulate(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    result = run_experiment(cfg, output_dir=args.out)
    if args.format == "csv":
        keys = list(result.summary)
        print(",".join(keys))
        print(",".join(str(result.summary[k]) for k in keys))
    else:
        print(json.dumps(result.summary, sort_keys=True))
    return EXIT_SESSION_FAILURES if result.failures else EXIT_OK


def _cmd_metrics(args) -> int:
    a = read_volume(args.mask_a, as_mask=True)
    b = read_volume(args.mask_b, as_mask=True)
    rep = report(a, b, tolerance_mm=args.tolerance_mm)
    d = rep.to_dict()
    d.pop("annotated_slices_only")
    if args.format == "csv":
        keys = list(d)
        print(",".join(keys))
        print(",".join(f"{d[k]:.10g}" for k in keys))
    else:
        print(json.dumps(d, sort_keys=True))
    return EXIT_OK


def _cmd_convert(args) -> int:
    grid = read_volume(args.src)
    write_volume(grid, args.dst)
    return EXIT_OK


_COMMANDS = {
    "phantom": _cmd_phantom,
    "prompts": _cmd_prompts,
    "simulate": _cmd_simulate,
    "metrics": _cmd_metrics,
    "convert": _cmd_convert,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except (SegloopError, OSError, json.JSONDecodeError) as exc:
        print(f"segloop: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

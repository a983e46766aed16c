"""Command-line entry point: ``cyclic-ukf {filter,metrics,synth,validate}``.

Exit status: 0 success, 1 input validation failure, 2 runtime failure.
Settings resolve as command-line flag > ``--config`` file > built-in default.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import geometry, pipeline, synth
from .errors import CyclicUKFError

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2

# flag dest -> config key
_FILTER_FLAGS = {
    "gate": "gate",
    "threshold": "threshold",
    "samples": "samples",
    "q1": "q1",
    "q2": "q2",
    "r": "r",
    "omega_var": "omega_var",
    "alpha": "alpha",
    "beta": "beta",
    "kappa": "kappa",
    "backend": "backend",
}


def _add_filter_options(p):
    p.add_argument("--config", type=Path, help="TOML file of key = value settings")
    p.add_argument("--gate", choices=pipeline.GATE_MODES)
    p.add_argument("--threshold", type=float, help="Dice threshold for the gate (default 0.9)")
    p.add_argument("--samples", type=int, help="contour samples per frame (default 60)")
    p.add_argument("--q1", type=float, help="mean-position noise intensity (default 1e-3)")
    p.add_argument("--q2", type=float, help="velocity noise intensity (default 1e-3)")
    p.add_argument("--r", type=float, help="measurement variance, px^2 (default 1e-2)")
    p.add_argument("--omega-var", dest="omega_var", type=float, help="omega random-walk variance (default 1)")
    p.add_argument("--alpha", type=float, help="UT spread (default 0.1)")
    p.add_argument("--beta", type=float, help="UT prior parameter (default 2)")
    p.add_argument("--kappa", type=float, help="UT secondary scaling (default -1)")
    p.add_argument(
        "--freeze-process-noise",
        action="store_true",
        default=None,
        help="build process noise once from the initial omega",
    )
    p.add_argument("--backend", choices=("compiled", "python"))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cyclic-ukf",
        description="Temporal smoothing of periodic contour sequences with a cyclic-model UKF.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("filter", help="resample, gate, filter and write artifacts")
    p.add_argument("--input", required=True, type=Path, help="mask directory or contour JSON")
    p.add_argument("--output", required=True, type=Path)
    p.add_argument("--reference", type=Path, help="reference masks dir or contour JSON")
    _add_filter_options(p)

    p = sub.add_parser("metrics", help="score contours against a reference")
    p.add_argument("--input", required=True, type=Path, help="contour JSON (e.g. contours.json)")
    p.add_argument("--reference", required=True, type=Path, help="reference masks dir or contour JSON")
    p.add_argument("--output", required=True, type=Path)

    p = sub.add_parser("synth", help="write a synthetic periodic sequence")
    p.add_argument("--output", required=True, type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int, help="contour points (default 60)")
    p.add_argument("--config", type=Path, help="TOML file of synthetic-config keys")

    p = sub.add_parser("validate", help="check an input sequence")
    p.add_argument("--input", required=True, type=Path)
    return parser


def resolve_config(args):
    values = {}
    if getattr(args, "config", None) is not None:
        values.update(pipeline.load_config_file(args.config))
    for dest, key in _FILTER_FLAGS.items():
        v = getattr(args, dest, None)
        if v is not None:
            values[key] = v
    if getattr(args, "freeze_process_noise", None):
        values["freeze_process_noise"] = True
    return pipeline.PipelineConfig.from_mapping(values)


def _report(report, stream):
    if report.ok:
        print(f"{report.path}: ok", file=stream)
    for issue in report.issues:
        print(f"{report.path}: {issue}", file=stream)


def cmd_validate(args):
    report = pipeline.validate_input(args.input)
    _report(report, sys.stdout if report.ok else sys.stderr)
    return EXIT_OK if report.ok else EXIT_INVALID


def cmd_filter(args):
    report = pipeline.validate_input(args.input)
    if not report.ok:
        _report(report, sys.stderr)
        return EXIT_INVALID
    try:
        config = resolve_config(args)
    except (OSError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    seq = pipeline.load_sequence(args.input, args.reference)
    result = pipeline.run_pipeline(seq, config, args.output)
    state = "filtered" if result.decision.apply_filter else "passed through"
    print(f"{args.input}: {result.filtered.shape[0]} points x {result.filtered.shape[1]} frames {state}")
    return EXIT_OK


def cmd_metrics(args):
    meta, contours, raw = pipeline.read_contour_json(args.input)
    width, height = pipeline.canvas_from_contours(contours, raw)
    ref_masks, ref_contours = pipeline.load_reference(args.reference, width, height)
    if len(ref_masks) != len(contours):
        print(f"{len(ref_masks)} reference frame(s) for {len(contours)} frame(s)", file=sys.stderr)
        return EXIT_INVALID
    masks = [geometry.mask_from_contour(c, width, height) for c in contours]
    dice_values, hd_values = pipeline.score_frames(
        contours, masks, ref_masks, ref_contours, meta.pixel_spacing
    )
    args.output.mkdir(parents=True, exist_ok=True)
    pipeline.write_metrics(args.output, dice_values, hd_values)
    print(f"mean Dice {np.mean(dice_values):.4f}, mean Hausdorff {np.mean(hd_values):.3f} mm")
    return EXIT_OK


def cmd_synth(args):
    values = {}
    if args.config is not None:
        values.update(pipeline.load_config_file(args.config))
    if args.seed is not None:
        values["seed"] = args.seed
    if args.samples is not None:
        values["n_points"] = args.samples
    for key in ("outlier_frames", "center"):
        if key in values:
            values[key] = tuple(values[key])
    try:
        config = synth.SynthConfig(**values)
    except TypeError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    synth.write_dataset(config, args.output)
    with open(args.output / "synth_config.json", "w") as fh:
        json.dump({k: _jsonable(v) for k, v in vars(config).items()}, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote {config.n_frames} frames to {args.output}")
    return EXIT_OK


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, tuple):
        return list(v)
    return v


COMMANDS = {
    "filter": cmd_filter,
    "metrics": cmd_metrics,
    "synth": cmd_synth,
    "validate": cmd_validate,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (CyclicUKFError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

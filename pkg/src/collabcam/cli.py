"""Command-line entry point: single runs, the four sweeps and scene generation.

Every RunConfig field is exposed as a ``--kebab-case`` flag. Values are
resolved in order: built-in defaults, then ``--config FILE`` (JSON with the
same snake_case keys), then explicit flags.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import harness
from .scene import save_scene

CSV_HELP = """CSV output: one header row, then one row per (repetition, agent), columns in order:
  sweep, sweep_value      sweep name and the value of this point ("" for run)
  rep, agent, n_agents    repetition index, agent id, agents in the scene
  ap30 ap50 ap70 ap80     average precision at BEV IoU 0.3/0.5/0.7/0.8
  depth_acc_full          depth-bin accuracy over non-sky pixels after collaboration
  depth_acc_fg            same, over object pixels only
  depth_acc_*_single      the same accuracies of the agent's own estimate
  bytes_sent              frame bytes this agent sent over both rounds
  bytes_round1/2          frame bytes exchanged by all agents in each round
  log2_volume             log2 of bytes_round1 + bytes_round2 (empty if zero)
Floats use shortest round-trip repr; infinite budgets print as "inf".
Set COCA_THREADS to cap the number of scenes processed in parallel."""

# fields with a None default need an explicit element type
_NONE_TYPES = {"scene_file": str, "budget": float}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("run configuration (defaults: standard suite)")
    for f in fields(harness.RunConfig):
        flag = "--" + f.name.replace("_", "-")
        default = f.default
        kw = dict(dest=f.name, default=argparse.SUPPRESS, help=f"default {default!r}")
        if isinstance(default, bool):
            group.add_argument(flag, action=argparse.BooleanOptionalAction, **kw)
        elif isinstance(default, tuple):
            nargs = "+" if f.name == "iou_thresholds" else len(default)
            group.add_argument(flag, type=type(default[0]), nargs=nargs, metavar="V", **kw)
        elif default is None:
            group.add_argument(flag, type=_NONE_TYPES[f.name], **kw)
        else:
            group.add_argument(flag, type=type(default), **kw)


def _config(args) -> harness.RunConfig:
    base = harness.load_config(args.config) if args.config else harness.RunConfig()
    names = {f.name for f in fields(harness.RunConfig)}
    given = {k: v for k, v in vars(args).items() if k in names}
    return harness.config_from_dict(given, base)


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _print_summary(result: harness.SweepResult) -> None:
    for entry in result.summary(("ap50", "depth_acc_full", "log2_volume")):
        print(
            "  ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in entry.items()),
            file=sys.stderr,
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="collabcam",
        description="Collaborative camera-only 3D detection simulator.",
        epilog=CSV_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(
            name, help=help_text, description=help_text, epilog=CSV_HELP,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        p.add_argument("--config", help="JSON file with RunConfig keys")
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--dump-frames", metavar="DIR", help="write every wire frame to DIR")
        _add_config_flags(p)
        return p

    add("run", "Run R seeded scenes with the given configuration.")
    p = add("sweep-agents", "Vary the number of agents.")
    p.add_argument("--agents", type=int, nargs="+", default=[1, 2, 4, 8])
    p = add("sweep-bandwidth", "Vary the per-round byte budget (ascending; 'inf' allowed).")
    p.add_argument("--budgets", type=float, nargs="+", default=[0, 2**10, 2**14, 2**18, float("inf")])
    p = add("sweep-pose", "Vary the pose-noise standard deviation in meters.")
    p.add_argument("--sigmas", type=float, nargs="+", default=[0.0, 0.2, 0.4, 0.6])
    add("sweep-spacing", "Compare uniform and linear-increasing depth bins.")
    p = add("gen-scene", "Write the generated scene of one repetition as JSON.")
    p.add_argument("--rep", type=int, default=0, help="repetition index (default 0)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _config(args)
    except (OSError, ValueError, TypeError) as exc:
        print(f"collabcam: {exc}", file=sys.stderr)
        return 2
    dump = args.dump_frames

    if args.command == "gen-scene":
        _emit(save_scene(harness.scene_for(replace(config, scene_file=None), args.rep)), args.out)
        return 0
    if args.command == "run":
        report = harness.run_repetitions(config, dump)
        _emit(harness.rows_to_csv(report.rows), args.out)
        print(f"ap50={report.mean('ap50'):.4g}", file=sys.stderr)
        return 0
    try:
        if args.command == "sweep-agents":
            result = harness.sweep_agents(config, args.agents, dump)
        elif args.command == "sweep-bandwidth":
            result = harness.sweep_bandwidth(config, args.budgets, dump)
        elif args.command == "sweep-pose":
            result = harness.sweep_pose_noise(config, args.sigmas, dump)
        else:
            result = harness.sweep_spacing(config, dump)
    except ValueError as exc:
        print(f"collabcam: {exc}", file=sys.stderr)
        return 2
    _emit(harness.rows_to_csv(result.rows), args.out)
    _print_summary(result)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

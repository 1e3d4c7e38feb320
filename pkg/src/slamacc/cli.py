"""Command-line driver.

Exit codes: 0 success, 1 validation or usage error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import __version__
from .calib import SolveOptions
from .errors import ValidationError
from .geom import DEFAULT_RHO
from .sync import POLICIES

log = logging.getLogger("slamacc")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def build_parser():
    ap = _Parser(prog="slamacc", description="Accuracy analysis for robot-mounted monocular SLAM.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("calibrate", help="solve for the base->pattern and camera->gripper transforms")
    p.add_argument("--samples", required=True)
    p.add_argument("--arm", required=True)
    p.add_argument("--rho", type=float, default=DEFAULT_RHO, metavar="MM_PER_RAD")
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale-free", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("sync", help="pair frames with interpolated joint angles")
    p.add_argument("--frames", required=True)
    p.add_argument("--joints", required=True)
    p.add_argument("--max-gap-ms", type=float, default=50.0)
    p.add_argument("--policy", choices=POLICIES, default="linear")
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="depth errors of every keyframe against the mesh")
    p.add_argument("--manifest", required=True)
    p.add_argument("--extrinsics", required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--arm", help="arm model (default: the one listed in the manifest)")
    p.add_argument("--scale-method", choices=("lsq", "median", "weighted"), default="lsq")
    p.add_argument("--along-ray", action="store_true", help="depth along the ray instead of camera z")
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="heatmaps and effective region from an evaluation")
    p.add_argument("--eval", required=True, dest="eval_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=1.0, metavar="MM")
    p.add_argument("--median-k", type=int, default=5)
    p.add_argument("--vmax", type=float, metavar="MM", help="upper clamp of the colour scale")
    return ap


def _dispatch(args):
    from . import pipeline

    if args.command == "simulate":
        if args.seed is not None:
            from .io import write_dataset
            from .simgen import load_config, simulate

            cfg = dataclasses.replace(load_config(args.config), seed=args.seed)
            m = write_dataset(simulate(cfg), cfg, args.out)
        else:
            m = pipeline.run_simulate(args.config, args.out)
        print(f"wrote {len(m.files)} files to {args.out}")
    elif args.command == "calibrate":
        opts = SolveOptions(rho=args.rho, scale_free=args.scale_free, max_iter=args.max_iter,
                            restarts=args.restarts, seed=args.seed)
        r = pipeline.run_calibrate(args.samples, args.arm, args.out, opts)
        print(f"rms {r.final_rms:.6g} mm, {r.iterations} iterations, converged={r.converged}")
    elif args.command == "sync":
        packets, drops = pipeline.run_sync(args.frames, args.joints, args.out,
                                           int(round(args.max_gap_ms * 1e6)), args.policy)
        print(f"{len(packets)} packets, {len(drops)} dropped")
    elif args.command == "evaluate":
        _, summary = pipeline.run_evaluate(args.manifest, args.extrinsics, args.mesh, args.out,
                                           args.arm, args.scale_method, args.along_ray)
        print(f"{len(summary['keyframes'])} keyframes, {summary['total_points']} points")
    elif args.command == "report":
        info = pipeline.run_report(args.eval_dir, args.out, args.threshold, args.median_k, args.vmax)
        print(f"effective region covers {info['effective_fraction']:.3%} of the image")
    return 0


def run_cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ValidationError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except OSError as exc:
        sys.stderr.write(f"I/O error: {exc}\n")
        return 2


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()

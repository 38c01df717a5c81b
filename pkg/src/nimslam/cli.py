"""Command-line interface.

Subcommands: run (SLAM over a sequence directory), mesh (checkpoint ->
PLY/OBJ), eval-traj (ATE RMSE), eval-mesh (accuracy/completion/ratio),
synth (generate a synthetic sequence), gradcheck (finite-difference suite).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import SlamConfig, load_config, save_config
from .errors import NimslamError


def _cmd_run(args) -> int:
    from .datasets import load_tum_sequence, save_trajectory
    from .implicit_map import save_checkpoint
    from .slam import SlamEngine, write_log_csv

    config = load_config(args.config) if args.config else SlamConfig()
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    sequence = load_tum_sequence(args.sequence)
    if sequence.intrinsics is None:
        print("error: sequence has no calib.txt and no intrinsics", file=sys.stderr)
        return 2
    engine = SlamEngine(config)
    result = engine.run(sequence)
    os.makedirs(args.output, exist_ok=True)
    save_trajectory(os.path.join(args.output, "trajectory.txt"), result.trajectory)
    save_checkpoint(os.path.join(args.output, "map.ckpt"), result.pyramid, result.decoder)
    write_log_csv(os.path.join(args.output, "log.csv"), result.logs)
    save_config(config, os.path.join(args.output, "config_used.txt"))
    if not result.ok:
        print(f"tracking failed at frame {result.failed_at}; partial trajectory written")
        return 3
    print(f"done: {len(result.trajectory)} poses, {len(result.keyframe_indices)} keyframes")
    return 0


def _cmd_mesh(args) -> int:
    from .implicit_map import load_checkpoint
    from .mesh import extract_mesh, frustum_cull, save_mesh

    pyramid, decoder = load_checkpoint(args.checkpoint)
    mesh = extract_mesh(pyramid, decoder, resolution=args.resolution,
                        level=args.level, with_colors=args.colors)
    if args.cull_with:
        from .datasets import load_calibration, load_trajectory

        if not args.calib:
            print("error: --cull-with requires --calib", file=sys.stderr)
            return 2
        trajectory = load_trajectory(args.cull_with)
        K = load_calibration(args.calib)
        mesh = frustum_cull(mesh, [p for _, p in trajectory], K)
    save_mesh(args.output, mesh)
    print(f"wrote {args.output}: {len(mesh.vertices)} vertices, "
          f"{len(mesh.triangles)} triangles")
    return 0


def _cmd_eval_traj(args) -> int:
    from .datasets import load_trajectory
    from .metrics import ate_rmse

    est = load_trajectory(args.est)
    gt = load_trajectory(args.gt)
    value = ate_rmse(est, gt)
    print(f"ATE RMSE [m]: {value:.6f}")
    return 0


def _cmd_eval_mesh(args) -> int:
    from .mesh import load_mesh
    from .metrics import mesh_metrics

    recon = load_mesh(args.recon)
    gt = load_mesh(args.gt)
    cull = None
    K = None
    if args.cull_with:
        from .datasets import load_calibration, load_trajectory

        if not args.calib:
            print("error: --cull-with requires --calib", file=sys.stderr)
            return 2
        cull = load_trajectory(args.cull_with)
        K = load_calibration(args.calib)
    acc, comp, ratio = mesh_metrics(recon, gt, n_points=args.points,
                                    threshold=args.threshold,
                                    cull_trajectory=cull, intrinsics=K)
    print(f"accuracy [cm]: {acc:.4f}")
    print(f"completion [cm]: {comp:.4f}")
    print(f"completion ratio [%]: {ratio:.2f}")
    return 0


def _cmd_synth(args) -> int:
    from .geometry import CameraIntrinsics
    from .synth import default_room_scene, render_synth_sequence, write_sequence

    scene = default_room_scene(seed=args.seed)
    K = CameraIntrinsics(
        fx=0.9 * args.width, fy=0.9 * args.width,
        cx=args.width / 2.0 - 0.5, cy=args.height / 2.0 - 0.5,
        width=args.width, height=args.height,
    )
    seq = render_synth_sequence(scene, args.frames, K, seed=args.seed)
    write_sequence(seq, args.output, scene=scene)
    lo, hi = scene.bounds()
    config = SlamConfig(bounds_min=tuple(lo), bounds_max=tuple(hi), seed=args.seed)
    save_config(config, os.path.join(args.output, "config.txt"))
    print(f"wrote {args.frames} frames to {args.output} "
          f"(ground truth: trajectory, depths, scene_mesh.ply, config.txt)")
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import finite_difference_check

    report = finite_difference_check(seed=args.seed)
    for group, err in report.per_group.items():
        print(f"{group}: max rel err {err:.3e}")
    print(f"checked {report.n_checked} parameters "
          f"({report.n_rejected} rejected as kink-contaminated) "
          f"in {report.runtime_s:.1f}s")
    print(f"max rel err: {report.max_rel_err:.3e} "
          f"({'PASS' if report.passed else 'FAIL'}, tolerance 1e-4)")
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nimslam",
        description="Dense RGB SLAM with a neural implicit map.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="track a sequence and build its map")
    p.add_argument("--sequence", required=True, help="sequence directory (TUM layout)")
    p.add_argument("--config", help="config file (flat key = value)")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("mesh", help="extract a mesh from a map checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--output", required=True, help=".ply or .obj path")
    p.add_argument("--resolution", type=int, default=256)
    p.add_argument("--level", type=float, default=0.5)
    p.add_argument("--colors", action="store_true", help="attach vertex colors")
    p.add_argument("--cull-with", help="trajectory file for frustum culling")
    p.add_argument("--calib", help="calibration file (required with --cull-with)")
    p.set_defaults(func=_cmd_mesh)

    p = sub.add_parser("eval-traj", help="ATE RMSE of a trajectory vs ground truth")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=_cmd_eval_traj)

    p = sub.add_parser("eval-mesh", help="accuracy/completion metrics of a mesh")
    p.add_argument("--recon", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--points", type=int, default=200000)
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--cull-with", help="trajectory file for frustum culling")
    p.add_argument("--calib", help="calibration file (required with --cull-with)")
    p.set_defaults(func=_cmd_eval_mesh)

    p = sub.add_parser("synth", help="generate a synthetic room sequence")
    p.add_argument("--output", required=True)
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--width", type=int, default=120)
    p.add_argument("--height", type=int, default=90)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NimslamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

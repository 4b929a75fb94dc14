"""Command-line front end.

Exit codes: 0 success, 2 usage or I/O error (including bad inputs rejected by
a module), 3 planning failure (blocked start/goal or no path).
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import pipeline, solm
from .config import ConfigError, RunConfig, load_config
from .geometry import PlanarPose
from .metric import STRATEGIES
from .scene import SceneError
from .search import SearchError
from .trajectory import TrajectoryError

EXIT_OK, EXIT_USAGE, EXIT_PLAN = 0, 2, 3
_DEFAULTS = RunConfig()

class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    """Show defaults, except for config-backed flags whose help carries them."""

    def _get_help_string(self, action):
        if action.default is None or action.default is argparse.SUPPRESS or "(default" in (action.help or ""):
            return action.help
        return super()._get_help_string(action)


def _config_default(key: str):
    node = _DEFAULTS
    for part in key.split("."):
        node = getattr(node, part)
    return node


def _cfg_opt(p: argparse.ArgumentParser, flag: str, key: str, help: str, **kw) -> None:
    """Flag that overrides config entry ``key``; unset means 'use the config'."""
    dest = key.replace(".", "__")
    if "choices" not in kw:
        kw["metavar"] = flag.lstrip("-").upper().replace("-", "_")
    p.add_argument(flag, dest=dest, default=None, help=f"{help} (default: {_config_default(key)})", **kw)


def _pose(text: str) -> PlanarPose:
    try:
        return PlanarPose.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _common(p: argparse.ArgumentParser, *keys: str) -> None:
    p.add_argument("--config", help="YAML run configuration; flags override it (default: built-in defaults)")
    table = {
        "scene": ("--scene", "canonical scene name or scene file", {}),
        "lidar": ("--lidar", "LiDAR preset or config block name", {}),
        "seed": ("--seed", "global seed", {"type": int}),
        "workers": ("--workers", "worker processes for map building", {"type": int}),
        "map_density": ("--map-density", "map cloud density in points/m^2", {"type": float}),
    }
    for key in keys:
        flag, text, kw = table[key]
        _cfg_opt(p, flag, key, text, **kw)


def _run_config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    overrides = {k.replace("__", "."): v for k, v in vars(args).items()
                 if "__" in k or k in RunConfig.model_fields}
    return cfg.with_overrides(**overrides)


# ---------------------------------------------------------------------------
# commands


def cmd_scene_build(args) -> int:
    cfg = _run_config(args)
    scene = pipeline.scene_model(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    m = scene.mesh
    with open(out / "mesh.obj", "w", encoding="utf-8") as fh:
        fh.writelines(f"v {x:.10g} {y:.10g} {z:.10g}\n" for x, y, z in m.vertices)
        fh.writelines(f"f {a + 1} {b + 1} {c + 1}\n" for a, b, c in m.triangles)
    np.savetxt(out / "cloud.xyz", scene.cloud.points, fmt="%.10g")
    occ = scene.occupancy
    with open(out / "occupancy.pgm", "wb") as fh:
        fh.write(f"P5\n{occ.width} {occ.height}\n255\n".encode("ascii"))
        fh.write(np.where(occ.occupied[::-1], 0, 255).astype(np.uint8).tobytes())
    print(f"triangles={len(m.triangles)} points={len(scene.cloud.points)} "
          f"occupied={int(occ.occupied.sum())}/{occ.width * occ.height} out={out}")
    return EXIT_OK


def cmd_solm_build(args) -> int:
    cfg = _run_config(args)
    t0 = time.perf_counter()
    scene = pipeline.scene_model(cfg)
    grid, stats = pipeline.build_solm(cfg, scene)
    files = pipeline.write_solm(grid, args.out, images=not args.no_images)
    a, b, c = grid.dims
    print(f"cells={stats.cells} evaluated={stats.evaluated} skipped={stats.skipped} "
          f"degenerate={stats.degenerate} dims={a}x{b}x{c} seconds={time.perf_counter() - t0:.2f}")
    for f in files:
        print(f"wrote {f}")
    return EXIT_OK


def cmd_solm_export(args) -> int:
    grid = solm.load(args.solm)
    c = grid.dims[2]
    channels = range(c) if args.channel is None else [args.channel]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k in channels:
        path = out / f"{Path(args.solm).stem}_ch{k}.pgm"
        solm.export_image(grid, k, path)
        print(f"wrote {path}")
    return EXIT_OK


def cmd_metric_eval(args) -> int:
    cfg = _run_config(args)
    res = pipeline.metric_at(cfg, pipeline.scene_model(cfg), args.pose)
    print(pipeline.metric_line(res, cfg.metric.strategy))
    return EXIT_OK


def cmd_mde_eval(args) -> int:
    cfg = _run_config(args)
    res = pipeline.mde_at(cfg, pipeline.scene_model(cfg), args.pose)
    print(f"mde={pipeline.fmt(res.value)}")
    rows = list(pipeline.mde_rows(res))
    if args.out:
        pipeline.write_csv(args.out, pipeline.MDE_COLUMNS, rows)
        print(f"wrote {args.out}")
    else:
        print(",".join(pipeline.MDE_COLUMNS))
        for r in rows:
            print(",".join(pipeline.fmt(v) for v in r))
    return EXIT_OK


def cmd_plan(args) -> int:
    cfg = _run_config(args)
    grid = solm.load(args.solm)
    scene = pipeline.scene_model(cfg)
    try:
        outcome = pipeline.plan(cfg, scene, grid, args.start, args.goal, baseline=args.baseline)
    except SearchError as exc:
        print(f"planning failed: {exc}", file=sys.stderr)
        return EXIT_PLAN
    pipeline.write_csv(args.path_out, pipeline.PATH_COLUMNS, pipeline.path_rows(grid, outcome.path))
    rows = pipeline.trajectory_rows(outcome.trajectory, grid)
    pipeline.write_csv(args.out, pipeline.TRAJECTORY_COLUMNS, rows)
    a, opt = outcome.audit, outcome.optimization
    print(f"path_cells={len(outcome.path)} path_cost={pipeline.fmt(outcome.path.cost)} "
          f"duration={pipeline.fmt(outcome.trajectory.total_time)} samples={len(rows)}")
    print(f"audit v_lon={a.v_lon:.4f} v_lat={a.v_lat:.4f} omega={a.omega:.4f} "
          f"min_sdf={a.min_sdf:.4f} slip={a.holonomy:.2e}")
    if opt is not None:
        print(f"optimizer converged={int(opt.converged)} inner={opt.inner_iterations} "
              f"outer={opt.outer_iterations} retime={opt.retime_factor:.4f}")
        if opt.warning:
            print(f"warning: {opt.warning}", file=sys.stderr)
        if opt.infeasible_start:
            print("warning: initial trajectory crosses obstacle cells", file=sys.stderr)
    print(f"wrote {args.path_out}\nwrote {args.out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _run_config(args)
    rows = pipeline.read_csv(args.traj, pipeline.TRAJECTORY_COLUMNS)
    res = pipeline.validate(cfg, pipeline.scene_model(cfg), rows)
    pipeline.write_csv(args.out, pipeline.VALIDATION_COLUMNS, res.rows)
    print(f"S={pipeline.fmt(res.total)} poses={len(res.rows)}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(load_config(args.config)), host=args.host, port=args.port)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="solmplan", formatter_class=_Formatter,
                                     description="LiDAR localizability maps and perception-aware planning.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    groups = parser.add_subparsers(dest="group", required=True)

    def sub(group_parsers, name, help, fn):
        p = group_parsers.add_parser(name, help=help, description=help, formatter_class=_Formatter)
        p.set_defaults(func=fn)
        return p

    scene = groups.add_parser("scene", help="scene compilation", formatter_class=_Formatter)
    scene_cmds = scene.add_subparsers(dest="command", required=True)
    p = sub(scene_cmds, "build", "compile a scene to mesh, map cloud and occupancy image", cmd_scene_build)
    _common(p, "scene", "seed", "map_density")
    p.add_argument("--out", default="scene_out", help="output directory")

    sm = groups.add_parser("solm", help="static observation loss maps", formatter_class=_Formatter)
    sm_cmds = sm.add_subparsers(dest="command", required=True)
    p = sub(sm_cmds, "build", "evaluate the loss over the pose grid and save it", cmd_solm_build)
    _common(p, "scene", "lidar", "seed", "workers", "map_density")
    p.add_argument("--threads", dest="workers", type=int, default=None, help=f"alias of --workers (default: {_DEFAULTS.workers})")
    _cfg_opt(p, "--resolution", "grid.resolution", "xy cell size in meters", type=float)
    _cfg_opt(p, "--yaw-channels", "grid.yaw_channels", "yaw channels; unset picks 1 for 360 degree sensors, else 8",
             type=int)
    _cfg_opt(p, "--strategy", "metric.strategy", "loss strategy", choices=STRATEGIES)
    _cfg_opt(p, "--r-safe", "planner.r_safe", "clearance below which cells are obstacles", type=float)
    p.add_argument("--out", default="solm.bin", help="output map file; channel images are written beside it")
    p.add_argument("--no-images", action="store_true", help="skip the per-channel graymaps")

    p = sub(sm_cmds, "export", "write per-channel graymaps of a saved map", cmd_solm_export)
    p.add_argument("--solm", required=True, help="map file")
    p.add_argument("--channel", type=int, default=None, help="single channel to export (default: all)")
    p.add_argument("--out-dir", default=".", help="output directory")

    metric = groups.add_parser("metric", help="single-pose localizability", formatter_class=_Formatter)
    metric_cmds = metric.add_subparsers(dest="command", required=True)
    p = sub(metric_cmds, "eval", "simulate one scan and print the loss", cmd_metric_eval)
    _common(p, "scene", "lidar", "seed", "map_density")
    p.add_argument("--pose", type=_pose, required=True, help="x,y,theta")
    _cfg_opt(p, "--strategy", "metric.strategy", "loss strategy", choices=STRATEGIES)
    _cfg_opt(p, "--w1", "metric.w1", "weight of the eigenvalue term", type=float)
    _cfg_opt(p, "--w2", "metric.w2", "weight of the constant term", type=float)

    md = groups.add_parser("mde", help="registration-based ground truth", formatter_class=_Formatter)
    md_cmds = md.add_subparsers(dest="command", required=True)
    p = sub(md_cmds, "eval", "mean disturbance-induced error at one pose", cmd_mde_eval)
    _common(p, "scene", "lidar", "seed", "map_density")
    p.add_argument("--pose", type=_pose, required=True, help="x,y,theta")
    _cfg_opt(p, "--n", "mde.n", "number of disturbances", type=int)
    _cfg_opt(p, "--radius", "mde.radius", "disturbance radius", type=float)
    p.add_argument("--out", default=None, help="per-disturbance CSV (default: print to stdout)")

    p = sub(groups, "plan", "search the map and optimize a trajectory", cmd_plan)
    _common(p, "scene", "lidar", "seed", "map_density")
    p.add_argument("--solm", required=True, help="map file from 'solm build'")
    p.add_argument("--start", type=_pose, required=True, help="x,y,theta")
    p.add_argument("--goal", type=_pose, required=True, help="x,y,theta")
    _cfg_opt(p, "--rho-q", "planner.rho_q", "loss weight in the search", type=float)
    _cfg_opt(p, "--r-safe", "planner.r_safe", "required clearance in meters", type=float)
    _cfg_opt(p, "--robot", "optimizer.robot", "motion model", choices=("omnidirectional", "nonholonomic"))
    _cfg_opt(p, "--rho-t", "optimizer.rho_t", "time weight", type=float)
    p.add_argument("--baseline", action="store_true",
                   help="shortest path (rho_q = 0) without the loss term in the optimizer")
    p.add_argument("--path-out", default="path.csv", help="grid path CSV")
    p.add_argument("--out", default="trajectory.csv", help="trajectory CSV sampled at 50 Hz")

    p = sub(groups, "validate", "per-pose MDE along a trajectory", cmd_validate)
    _common(p, "scene", "lidar", "seed", "map_density")
    p.add_argument("--traj", required=True, help="trajectory CSV from 'plan'")
    _cfg_opt(p, "--interval", "validation.interval", "seconds between validated poses", type=float)
    _cfg_opt(p, "--n", "validation.n", "disturbances per pose", type=int)
    p.add_argument("--out", default="validation.csv", help="per-pose MDE CSV")

    p = sub(groups, "serve", "run the HTTP service", cmd_serve)
    p.add_argument("--config", help="YAML run configuration used as request defaults (default: built-in defaults)")
    p.add_argument("--host", default="127.0.0.1", help="bind address")
    p.add_argument("--port", type=int, default=8000, help="port")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (ConfigError, SceneError, solm.SolmError, TrajectoryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

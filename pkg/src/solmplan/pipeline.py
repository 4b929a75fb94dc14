"""End-to-end steps shared by the command line and the HTTP service.

Each step takes a :class:`RunConfig` plus already-built artifacts and returns
plain results; writing files is kept in small helpers so callers can choose.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import solm
from .config import RunConfig
from .evaluation import evaluate_pose
from .geometry import PlanarPose
from .metric import MetricResult
from .registration import MdeParams, MdeResult, mde
from .scene import SceneModel, build_scene_model, resolve_scene
from .sdf import SdfField, build_sdf
from .search import GridPath, SearchWeights, search
from .seeding import mix_seed
from .trajectory import (CubicSplineTraj, OptResult, audit, Audit, init_from_path, optimize,
                         sample_fixed_rate, single_pose)

TRAJECTORY_HZ = 50.0
TRAJECTORY_COLUMNS = ("t", "x", "y", "theta", "vx", "vy", "omega", "q_interp")
PATH_COLUMNS = ("i", "j", "k", "x", "y", "theta", "q")
VALIDATION_COLUMNS = ("t", "x", "y", "theta", "mde")
MDE_COLUMNS = ("j", "rho_x", "rho_y", "omega", "err_x", "err_y", "err_theta", "sq_error", "converged")


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.10g}"


def write_csv(path: str | Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path: str | Path, columns) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"CSV file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != tuple(columns):
        raise ValueError(f"{path}: expected header {','.join(columns)}")
    return np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(columns))


# ---------------------------------------------------------------------------
# scene and map


def scene_model(cfg: RunConfig) -> SceneModel:
    return build_scene_model(resolve_scene(cfg.scene), map_density=cfg.map_density, seed=cfg.seed)


def build_solm(cfg: RunConfig, scene: SceneModel) -> tuple[solm.SolmGrid, solm.BuildStats]:
    spec = solm.GridSpec.covering(scene.bounds, cfg.grid.resolution, cfg.yaw_channels())
    return solm.build(scene, cfg.lidar_model(), cfg.metric_config(), spec, seed=cfg.seed,
                      workers=cfg.workers, r_safe=cfg.planner.r_safe,
                      observation=cfg.observation_params(),
                      digest_extra={"map_density": cfg.map_density})


def channel_image_paths(path: str | Path, channels: int) -> list[Path]:
    p = Path(path)
    return [p.with_name(f"{p.stem}_ch{k}.pgm") for k in range(channels)]


def write_solm(grid: solm.SolmGrid, path: str | Path, images: bool = True) -> list[Path]:
    solm.save(grid, path)
    out = [Path(path)]
    if images:
        for k, img in enumerate(channel_image_paths(path, grid.dims[2])):
            solm.export_image(grid, k, img)
            out.append(img)
    return out


# ---------------------------------------------------------------------------
# single-pose evaluation


def metric_at(cfg: RunConfig, scene: SceneModel, pose: PlanarPose) -> MetricResult:
    return evaluate_pose(scene, pose, cfg.lidar_model(), cfg.metric_config(), cfg.seed, cfg.observation_params())


def mde_at(cfg: RunConfig, scene: SceneModel, pose: PlanarPose) -> MdeResult:
    return mde(scene, pose, cfg.lidar_model(), cfg.mde_params(), cfg.observation_params())


def metric_line(res: MetricResult, strategy: str) -> str:
    """One ``key=value`` line; a degenerate pose reports q=inf and degenerate=1."""
    lam = ",".join(fmt(v) for v in res.lambda_top)
    return (f"strategy={strategy} q={fmt(res.q)} sigma1={fmt(res.sigma1)} xi={fmt(res.xi)} "
            f"lambda=[{lam}] degenerate={int(res.degenerate)}")


def mde_rows(res: MdeResult):
    for j in range(len(res.squared_errors)):
        yield (j, *res.disturbances[j], *res.errors[j], res.squared_errors[j], res.converged[j])


# ---------------------------------------------------------------------------
# planning


@dataclass
class PlanOutcome:
    path: GridPath
    trajectory: CubicSplineTraj
    optimization: OptResult | None
    audit: Audit


def plan(cfg: RunConfig, scene: SceneModel, grid: solm.SolmGrid, start: PlanarPose, goal: PlanarPose,
         baseline: bool = False, sdf: SdfField | None = None) -> PlanOutcome:
    """Search then optimize.  ``baseline`` plans the shortest path (rho_q = 0)
    and leaves the loss out of the trajectory objective.

    Raises :class:`~solmplan.search.SearchError` when start or goal is blocked
    and :class:`~solmplan.search.NoPathError` when they are not connected.
    """
    sdf = sdf or build_sdf(scene.occupancy)
    weights = cfg.search_weights()
    if baseline:
        weights = SearchWeights(0.0, weights.l_yaw, weights.r_safe)
    params = cfg.opt_params(baseline=baseline)
    path = search(grid, sdf, start, goal, weights)
    s, g = start.as_array(), goal.as_array()
    if np.allclose(s, g, atol=1e-12):
        traj = single_pose(s)
        return PlanOutcome(path, traj, None, audit(traj, sdf, params))
    poses = path.poses if len(path) > 1 else np.vstack([s, g])
    traj0 = init_from_path(poses, cfg.optimizer.v_avg, cfg.planner.l_yaw,
                           heading=cfg.heading_mode(grid.dims[2]), start=s, goal=g)
    result = optimize(traj0, grid, sdf, params)
    return PlanOutcome(path, result.trajectory, result, audit(result.trajectory, sdf, params))


def path_rows(grid: solm.SolmGrid, path: GridPath):
    q = grid.filled()
    for (i, j, k), pose in zip(path.cells, path.poses):
        yield (i, j, k, *pose, q[k, j, i])


def trajectory_rows(traj: CubicSplineTraj, grid: solm.SolmGrid | None, hz: float = TRAJECTORY_HZ) -> np.ndarray:
    t, pos, vel = sample_fixed_rate(traj, hz)
    q = solm.interpolate_many(grid, pos)[0] if grid is not None else np.full(len(t), math.nan)
    return np.column_stack([t, pos, vel, q])


# ---------------------------------------------------------------------------
# validation


@dataclass
class Validation:
    rows: np.ndarray  # (n, 5): t, x, y, theta, mde
    total: float


def validation_poses(traj_rows: np.ndarray, interval: float) -> np.ndarray:
    """Rows of a trajectory table closest to t = 0, interval, 2*interval, ..."""
    t = traj_rows[:, 0]
    if len(t) == 0:
        return traj_rows[:0]
    targets = np.arange(0.0, t[-1] + 1e-9, interval)
    idx = np.clip(np.searchsorted(t, targets - 1e-9), 0, len(t) - 1)
    return traj_rows[np.unique(idx)]


def validate(cfg: RunConfig, scene: SceneModel, traj_rows: np.ndarray) -> Validation:
    """Per-pose MDE at a constant time interval along a trajectory and its sum S."""
    v = cfg.validation
    lidar, obs = cfg.lidar_model(), cfg.observation_params()
    out = []
    for n, row in enumerate(validation_poses(traj_rows, v.interval)):
        pose = PlanarPose(row[1], row[2], row[3])
        params = MdeParams(n=v.n, radius=v.radius, seed=mix_seed(cfg.seed, "validate", n))
        out.append((row[0], pose.x, pose.y, pose.theta, mde(scene, pose, lidar, params, obs).value))
    rows = np.array(out, dtype=float).reshape(-1, 5)
    return Validation(rows, float(rows[:, 4].sum()))

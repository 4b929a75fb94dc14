"""Single-pose localizability evaluation and the four-scene comparison."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .geometry import PlanarPose
from .lidar import LidarModel, Scan, lidar_preset, scene_bvh, simulate_scan
from .metric import MetricConfig, MetricResult, evaluate, evaluate_system
from .observation import ObservationParams, build_observations
from .registration import MdeParams, MdeResult, mde
from .scene import MAP_DENSITY, SceneModel, build_scene_model, canonical_scene
from .seeding import mix_seed

# (a) structured, (b) box on rough terrain, (c) rough terrain, (d) single wall
COMPARISON_SCENES = ("houses", "meadow_house", "meadow", "wall")


def scan_at(scene: SceneModel, pose: PlanarPose, lidar: LidarModel, seed: int) -> Scan:
    return simulate_scan(scene_bvh(scene), pose, lidar, mix_seed(seed, "scan"))


def evaluate_pose(
    scene: SceneModel,
    pose: PlanarPose,
    lidar: LidarModel,
    cfg: MetricConfig = MetricConfig(),
    seed: int = 0,
    observation: ObservationParams = ObservationParams(),
    scan: Scan | None = None,
) -> MetricResult:
    """Simulate a scan at ``pose`` and score it; an empty scan is degenerate."""
    if scan is None:
        scan = scan_at(scene, pose, lidar, seed)
    if len(scan) == 0:
        return evaluate_empty(cfg)
    return evaluate(build_observations(scan, scene.cloud, pose, observation), cfg)


def evaluate_empty(cfg: MetricConfig) -> MetricResult:
    return evaluate_system(np.zeros((0, 3)), np.zeros(0), cfg)


@dataclass
class ComparisonRow:
    scene: str
    metric: MetricResult
    losses: dict[str, float]
    mde: MdeResult


def compare_scenes(
    names=COMPARISON_SCENES,
    pose: PlanarPose = PlanarPose(0.0, 0.0, 0.0),
    lidar: LidarModel | None = None,
    cfg: MetricConfig = MetricConfig(),
    mde_params: MdeParams = MdeParams(),
    seed: int = 0,
    map_density: float = MAP_DENSITY,
) -> tuple[list[ComparisonRow], float]:
    """Loss under every strategy and MDE at ``pose`` for each named scene.

    The metric and the registrations share one simulated scan per scene.
    Returns the rows and the elapsed wall-clock seconds.
    """
    lidar = lidar or lidar_preset("mid70-like")
    t0 = time.perf_counter()
    rows = []
    for name in names:
        scene = build_scene_model(canonical_scene(name), map_density=map_density, seed=seed)
        scan = scan_at(scene, pose, lidar, seed)
        res = evaluate_pose(scene, pose, lidar, cfg, seed, scan=scan)
        md = mde(scene, pose, lidar, mde_params, scan=scan)
        rows.append(ComparisonRow(name, res, res.losses(cfg), md))
    return rows, time.perf_counter() - t0

"""Gauss-Newton point-to-plane registration and the Mean Disturbance-induced Error (MDE)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import CHARACTERISTIC_LENGTH, PlanarPose, PlanarTwist, between, compose, exp_se2, log_se2
from .lidar import LidarModel, Scan, simulate_scan, scene_bvh
from .observation import ObservationParams, build_observations
from .scene import MapCloud, SceneModel
from .seeding import mix_seed, rng_for


@dataclass(frozen=True)
class RegistrationParams:
    max_iterations: int = 30
    tol: float = 1e-6
    observation: ObservationParams = ObservationParams()


@dataclass(frozen=True)
class RegistrationResult:
    pose: PlanarPose
    iterations: int
    converged: bool
    failed: bool = False  # an iterate had too few valid associations


def register(
    scan: Scan,
    cloud: MapCloud,
    init: PlanarPose,
    params: RegistrationParams = RegistrationParams(),
) -> RegistrationResult:
    """Iterate linearize / solve / update until the step is below ``tol``."""
    if len(scan) == 0:
        raise ValueError("cannot register an empty scan")
    x = init.as_array()
    pose = init
    for it in range(1, params.max_iterations + 1):
        obs = build_observations(scan, cloud, pose, params.observation)
        if obs.m < 3:
            return RegistrationResult(pose, it, False, True)
        step, *_ = np.linalg.lstsq(obs.A, obs.b, rcond=None)
        x = x + step
        pose = PlanarPose(x[0], x[1], x[2])
        x[2] = pose.theta
        if np.linalg.norm(step) < params.tol:
            return RegistrationResult(pose, it, True)
    return RegistrationResult(pose, params.max_iterations, False)


@dataclass(frozen=True)
class MdeParams:
    n: int = 50
    radius: float = 0.1
    seed: int = 0
    max_iterations: int = 30
    tol: float = 1e-6
    length: float = CHARACTERISTIC_LENGTH

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("MDE needs at least one disturbance")
        if self.radius < 0:
            raise ValueError("radius must be >= 0")


@dataclass
class MdeResult:
    value: float
    disturbances: np.ndarray = field(repr=False)  # (N, 3) applied twists (rho_x, rho_y, omega)
    errors: np.ndarray = field(repr=False)  # (N, 3) residual twists log(T_gt^-1 T_regi)
    squared_errors: np.ndarray = field(repr=False)  # (N,)
    converged: np.ndarray = field(repr=False)  # (N,) bool


def sample_disturbance(seed: int, j: int, radius: float, length: float = CHARACTERISTIC_LENGTH) -> PlanarTwist:
    """Twist with uniform direction in (rho_x, rho_y, L*omega) and uniform magnitude in [0, radius]."""
    rng = rng_for(seed, "mde", j)
    d = rng.standard_normal(3)
    d /= np.linalg.norm(d)
    r = rng.uniform(0.0, radius)
    return PlanarTwist(d[0] * r, d[1] * r, d[2] * r / length)


def mde(
    scene: SceneModel,
    pose: PlanarPose,
    lidar: LidarModel,
    params: MdeParams = MdeParams(),
    observation: ObservationParams = ObservationParams(),
    scan: Scan | None = None,
) -> MdeResult:
    """Mean squared twist error of registrations started from disturbed ground truth."""
    if scan is None:
        scan = simulate_scan(scene_bvh(scene), pose, lidar, mix_seed(params.seed, "mde-scan"))
    reg = RegistrationParams(params.max_iterations, params.tol, observation)
    dist = np.zeros((params.n, 3))
    err = np.zeros((params.n, 3))
    conv = np.zeros(params.n, dtype=bool)
    if len(scan) == 0:
        err[:] = np.nan
        return MdeResult(math.inf, dist, err, np.full(params.n, math.inf), conv)
    for j in range(params.n):
        tw = sample_disturbance(params.seed, j, params.radius, params.length)
        dist[j] = tw.as_array()
        start = compose(pose, exp_se2(tw))
        res = register(scan, scene.cloud, start, reg)
        e = log_se2(between(pose, res.pose))
        err[j] = e.as_array()
        conv[j] = res.converged
    sq = err[:, 0] ** 2 + err[:, 1] ** 2 + (params.length * err[:, 2]) ** 2
    return MdeResult(float(sq.mean()), dist, err, sq, conv)

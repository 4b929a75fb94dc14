"""Ray-casting LiDAR simulator on a regular azimuth x elevation grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .geometry import PlanarPose
from .raycast import BVH
from .scene import SceneModel


@dataclass(frozen=True)
class LidarModel:
    h_fov_deg: float = 70.0
    v_fov_deg: float = 70.0
    n_azimuth: int = 40
    n_elevation: int = 30
    max_range: float = 8.0
    min_range: float = 0.1
    sigma_r: float = 0.01
    mount_height: float = 0.5

    def __post_init__(self) -> None:
        if not (0 < self.h_fov_deg <= 360 and 0 < self.v_fov_deg <= 360):
            raise ValueError("fields of view must be in (0, 360]")
        if self.n_azimuth < 1 or self.n_elevation < 1:
            raise ValueError("ray counts must be >= 1")
        if not (0 <= self.min_range < self.max_range):
            raise ValueError("need 0 <= min_range < max_range")
        if self.sigma_r < 0:
            raise ValueError("sigma_r must be >= 0")

    @property
    def is_panoramic(self) -> bool:
        return self.h_fov_deg >= 360.0

    def to_dict(self) -> dict:
        return asdict(self)

    def azimuths(self) -> np.ndarray:
        if self.is_panoramic:
            return -math.pi + 2.0 * math.pi * np.arange(self.n_azimuth) / self.n_azimuth
        fov = math.radians(self.h_fov_deg)
        return -fov / 2 + fov * (np.arange(self.n_azimuth) + 0.5) / self.n_azimuth

    def elevations(self) -> np.ndarray:
        fov = math.radians(self.v_fov_deg)
        return -fov / 2 + fov * (np.arange(self.n_elevation) + 0.5) / self.n_elevation

    def directions(self) -> np.ndarray:
        """Unit ray directions in the sensor frame, elevation-major."""
        el, az = np.meshgrid(self.elevations(), self.azimuths(), indexing="ij")
        d = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], -1)
        return d.reshape(-1, 3)


LIDAR_PRESETS: dict[str, LidarModel] = {
    # limited field of view, Livox-Mid-70-like
    "mid70-like": LidarModel(),
    # rotating 360 degree sensor
    "spin-360": LidarModel(
        h_fov_deg=360.0, v_fov_deg=30.0, n_azimuth=180, n_elevation=8,
        max_range=8.0, min_range=0.1, sigma_r=0.01, mount_height=0.5,
    ),
}


def lidar_preset(name: str) -> LidarModel:
    try:
        return LIDAR_PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown LiDAR preset {name!r}; have {sorted(LIDAR_PRESETS)}") from None


@dataclass(frozen=True)
class Scan:
    points: np.ndarray  # (n, 3) sensor frame
    ranges: np.ndarray  # (n,) noise-free range of each return
    mount_height: float = 0.0

    def __len__(self) -> int:
        return len(self.points)


def simulate_scan(
    scene: SceneModel | BVH,
    pose: PlanarPose,
    model: LidarModel,
    seed: int | np.random.SeedSequence | None = 0,
) -> Scan:
    """Cast the ray grid from ``pose`` (sensor at ``mount_height``) and return hits."""
    bvh = scene if isinstance(scene, BVH) else scene_bvh(scene)
    d_sensor = model.directions()
    rot, trans = pose.lift(model.mount_height)
    d_world = d_sensor @ rot.T
    t, _ = bvh.intersect(trans[None], d_world, model.max_range)
    keep = np.isfinite(t) & (t >= model.min_range)
    true_r = t[keep]
    dirs = d_sensor[keep]
    r = true_r
    if model.sigma_r > 0:
        rng = np.random.default_rng(seed)
        noise = np.clip(rng.standard_normal(len(true_r)), -6.0, 6.0) * model.sigma_r
        r = np.maximum(true_r + noise, model.min_range)
    return Scan(dirs * r[:, None], true_r, model.mount_height)


_BVH_CACHE: dict[int, BVH] = {}


def scene_bvh(scene: SceneModel) -> BVH:
    """BVH of a scene's mesh, built once per mesh object."""
    key = id(scene.mesh)
    bvh = _BVH_CACHE.get(key)
    if bvh is None or bvh.mesh is not scene.mesh:
        bvh = BVH(scene.mesh)
        _BVH_CACHE[key] = bvh
    return bvh

"""Run configuration shared by the CLI and the HTTP service.

Every field has a default, so an empty file (or no file) is a valid
configuration; unknown keys are rejected at every nesting level.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .lidar import LIDAR_PRESETS, LidarModel
from .metric import MetricConfig
from .observation import ObservationParams
from .registration import MdeParams
from .scene import MAP_DENSITY
from .search import SearchWeights
from .trajectory import HEADING_MODES, OptParams


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class LidarSettings(_Strict):
    """One named sensor block; defaults are the limited-FoV sensor."""

    h_fov_deg: float = 70.0
    v_fov_deg: float = 70.0
    n_azimuth: int = 40
    n_elevation: int = 30
    max_range: float = 8.0
    min_range: float = 0.1
    sigma_r: float = 0.01
    mount_height: float = 0.5


class MetricSettings(_Strict):
    w1: float = 0.5
    w2: float = 0.5
    strategy: Literal["min", "n", "max"] = "n"


class ObservationSettings(_Strict):
    k: int = 5
    d_thresh: float = 0.1
    max_neighbor_dist: float = 0.5
    association: Literal["knn", "mesh"] = "knn"


class GridSettings(_Strict):
    resolution: float = Field(0.25, gt=0, description="xy cell size in meters")
    yaw_channels: int | None = Field(None, ge=1, description="None: 1 for a 360 degree sensor, else 8")


class PlannerSettings(_Strict):
    rho_q: float = Field(5.0, ge=0)
    l_yaw: float = Field(0.5, ge=0)
    r_safe: float = Field(0.3, ge=0)


class OptimizerSettings(_Strict):
    robot: Literal["omnidirectional", "nonholonomic"] = "omnidirectional"
    v_avg: float = Field(0.5, gt=0, description="speed used to time the initial spline")
    heading: str = Field("auto", description="auto, path, tangent or blend")
    rho_t: float = 1.0
    v_mlon: float = 1.0
    v_mlat: float = 0.5
    w_max: float = 1.0
    kappa: int = 8
    w_safety: float = 1e5
    w_dynamics: float = 1e5
    safety_margin: float = 0.4
    alm_lambda0: float = 0.0
    alm_rho0: float = 1.0
    alm_gamma: float = 10.0
    alm_cap: float = 1e4
    alm_tol: float = 1e-4
    alm_max_outer: int = 8
    lbfgs_memory: int = 8
    lbfgs_max_iter: int = 500
    lbfgs_gtol: float = 1e-6

    @field_validator("heading")
    @classmethod
    def _heading(cls, v: str) -> str:
        if v != "auto" and v not in HEADING_MODES:
            raise ValueError(f"heading must be 'auto' or one of {HEADING_MODES}")
        return v


class MdeSettings(_Strict):
    n: int = Field(50, ge=1)
    radius: float = Field(0.1, ge=0)


class ValidationSettings(_Strict):
    interval: float = Field(1.0, gt=0, description="seconds between validated poses")
    n: int = Field(10, ge=1, description="disturbances per validated pose")
    radius: float = Field(0.1, ge=0)


class RunConfig(_Strict):
    scene: str = Field("houses", description="canonical scene name or path to a scene file")
    lidar: str = Field("mid70-like", description="name of a preset or of a block in lidar_presets")
    lidar_presets: dict[str, LidarSettings] = Field(default_factory=dict)
    map_density: float = Field(MAP_DENSITY, gt=0)
    metric: MetricSettings = MetricSettings()
    observation: ObservationSettings = ObservationSettings()
    grid: GridSettings = GridSettings()
    planner: PlannerSettings = PlannerSettings()
    optimizer: OptimizerSettings = OptimizerSettings()
    mde: MdeSettings = MdeSettings()
    validation: ValidationSettings = ValidationSettings()
    seed: int = 0
    workers: int = Field(1, ge=1)

    # -- conversions to core parameter objects
    def lidar_model(self) -> LidarModel:
        if self.lidar in self.lidar_presets:
            return LidarModel(**self.lidar_presets[self.lidar].model_dump())
        if self.lidar in LIDAR_PRESETS:
            return LIDAR_PRESETS[self.lidar]
        raise ConfigError(f"unknown LiDAR {self.lidar!r}; have {sorted(set(LIDAR_PRESETS) | set(self.lidar_presets))}")

    def metric_config(self) -> MetricConfig:
        return MetricConfig(**self.metric.model_dump())

    def observation_params(self) -> ObservationParams:
        return ObservationParams(**self.observation.model_dump())

    def search_weights(self) -> SearchWeights:
        return SearchWeights(**self.planner.model_dump())

    def opt_params(self, baseline: bool = False) -> OptParams:
        o = self.optimizer.model_dump()
        for key in ("robot", "v_avg", "heading"):
            o.pop(key)
        return OptParams(r_safe=self.planner.r_safe, nonholonomic=self.optimizer.robot == "nonholonomic",
                         loss_weight=0.0 if baseline else 1.0, **o)

    def mde_params(self) -> MdeParams:
        return MdeParams(n=self.mde.n, radius=self.mde.radius, seed=self.seed)

    def yaw_channels(self) -> int:
        if self.grid.yaw_channels is not None:
            return self.grid.yaw_channels
        return 1 if self.lidar_model().is_panoramic else 8

    def heading_mode(self, yaw_channels: int) -> str:
        if self.optimizer.heading != "auto":
            return self.optimizer.heading
        if self.optimizer.robot == "nonholonomic":
            return "tangent"
        return "blend" if yaw_channels == 1 else "path"

    def with_overrides(self, **changes) -> "RunConfig":
        """Copy with dotted-key overrides, e.g. ``{"planner.rho_q": 0.0}``."""
        data = self.model_dump()
        for key, value in changes.items():
            if value is None:
                continue
            node = data
            *parents, leaf = key.split(".")
            for p in parents:
                node = node[p]
            node[leaf] = value
        return parse_config(data)


def parse_config(data: dict | None) -> RunConfig:
    try:
        return RunConfig.model_validate(data or {})
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    data = yaml.safe_load(p.read_text())
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    return parse_config(data)

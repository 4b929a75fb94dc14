"""Request and response bodies of the HTTP service."""

from __future__ import annotations

import math
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

from ..geometry import PlanarPose


class _Body(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Pose(_Body):
    x: float
    y: float
    theta: float = 0.0

    def planar(self) -> PlanarPose:
        return PlanarPose(self.x, self.y, self.theta)


def finite_or_none(v: float) -> float | None:
    return float(v) if math.isfinite(v) else None


class SceneRef(_Body):
    """Fields left unset fall back to the service's run configuration."""

    scene: str | None = None
    lidar: str | None = None
    seed: int | None = None
    map_density: float | None = Field(None, gt=0)


class MetricRequest(SceneRef):
    pose: Pose
    strategy: Literal["min", "n", "max"] | None = None


class MetricResponse(_Body):
    strategy: str
    q: float | None = Field(description="null when the pose is degenerate")
    sigma1: float
    xi: float | None
    lambda_top: list[float]
    degenerate: bool


class MdeRequest(SceneRef):
    pose: Pose
    n: int | None = Field(None, ge=1)
    radius: float | None = Field(None, ge=0)


class MdeResponse(_Body):
    mde: float | None
    squared_errors: list[float | None]
    converged: list[bool]


class SolmBuildRequest(SceneRef):
    resolution: float | None = Field(None, gt=0)
    yaw_channels: int | None = Field(None, ge=1)
    workers: int | None = Field(None, ge=1)


class SolmBuildResponse(_Body):
    id: str
    dims: tuple[int, int, int]
    cells: int
    evaluated: int
    skipped: int
    degenerate: int
    seconds: float


class PlanRequest(SceneRef):
    solm_id: str
    start: Pose
    goal: Pose
    baseline: bool = False
    rho_q: float | None = Field(None, ge=0)
    robot: Literal["omnidirectional", "nonholonomic"] | None = None


class AuditBody(_Body):
    v_lon: float
    v_lat: float
    omega: float
    min_sdf: float
    slip: float


class PlanResponse(_Body):
    path: list[tuple[int, int, int]]
    path_cost: float
    duration: float
    columns: list[str]
    trajectory: list[list[float | None]]
    audit: AuditBody
    converged: bool | None
    warning: str | None = None


class ValidateRequest(SceneRef):
    trajectory: list[list[float]] = Field(description="rows of t, x, y, theta, vx, vy, omega, q_interp")
    interval: float | None = Field(None, gt=0)
    n: int | None = Field(None, ge=1)


class ValidateResponse(_Body):
    total: float | None = Field(description="accumulated MDE S; null if any pose is degenerate")
    rows: list[list[float | None]]

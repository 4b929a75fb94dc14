"""FastAPI application wrapping the pipeline.

Built maps are kept in memory under the hex digest of their file bytes, so a
client builds once and plans many times against the returned id.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache

import numpy as np
from fastapi import FastAPI, HTTPException, Response

from .. import pipeline, solm
from ..config import ConfigError, RunConfig
from ..scene import SceneError
from ..search import SearchError
from . import schemas as S


def _num(v) -> float | None:
    return S.finite_or_none(float(v))


def create_app(base: RunConfig | None = None) -> FastAPI:
    base = base or RunConfig()
    app = FastAPI(title="solmplan", version="0.1.0")
    grids: dict[str, solm.SolmGrid] = {}

    @lru_cache(maxsize=8)
    def scene_for(scene: str, density: float, seed: int):
        return pipeline.scene_model(base.with_overrides(scene=scene, map_density=density, seed=seed))

    def config_for(req: S.SceneRef, **extra) -> RunConfig:
        try:
            cfg = base.with_overrides(scene=req.scene, lidar=req.lidar, seed=req.seed,
                                      map_density=req.map_density, **extra)
            cfg.lidar_model()
            return cfg
        except ConfigError as exc:
            raise HTTPException(400, str(exc)) from None

    def load_scene(cfg: RunConfig):
        try:
            return scene_for(cfg.scene, cfg.map_density, cfg.seed)
        except (FileNotFoundError, SceneError) as exc:
            raise HTTPException(404, str(exc)) from None

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.get("/scenes")
    def scenes() -> list[str]:
        from ..scene import canonical_scene_names

        return canonical_scene_names()

    @app.post("/metric", response_model=S.MetricResponse)
    def metric(req: S.MetricRequest) -> S.MetricResponse:
        cfg = config_for(req, **{"metric.strategy": req.strategy})
        res = pipeline.metric_at(cfg, load_scene(cfg), req.pose.planar())
        return S.MetricResponse(strategy=cfg.metric.strategy, q=_num(res.q), sigma1=float(res.sigma1),
                                xi=_num(res.xi), lambda_top=[float(v) for v in res.lambda_top],
                                degenerate=bool(res.degenerate))

    @app.post("/mde", response_model=S.MdeResponse)
    def mde(req: S.MdeRequest) -> S.MdeResponse:
        cfg = config_for(req, **{"mde.n": req.n, "mde.radius": req.radius})
        res = pipeline.mde_at(cfg, load_scene(cfg), req.pose.planar())
        return S.MdeResponse(mde=_num(res.value), squared_errors=[_num(v) for v in res.squared_errors],
                             converged=[bool(c) for c in res.converged])

    @app.post("/solm", response_model=S.SolmBuildResponse)
    def build_solm(req: S.SolmBuildRequest) -> S.SolmBuildResponse:
        cfg = config_for(req, **{"grid.resolution": req.resolution, "grid.yaw_channels": req.yaw_channels,
                                 "workers": req.workers})
        try:
            grid, stats = pipeline.build_solm(cfg, load_scene(cfg))
        except solm.SolmError as exc:
            raise HTTPException(422, str(exc)) from None
        key = hashlib.sha256(solm.to_bytes(grid)).hexdigest()
        grids[key] = grid
        return S.SolmBuildResponse(id=key, dims=grid.dims, cells=stats.cells, evaluated=stats.evaluated,
                                   skipped=stats.skipped, degenerate=stats.degenerate, seconds=stats.seconds)

    def grid_for(key: str) -> solm.SolmGrid:
        if key not in grids:
            raise HTTPException(404, f"no map with id {key}")
        return grids[key]

    @app.get("/solm/{key}")
    def download_solm(key: str) -> Response:
        return Response(solm.to_bytes(grid_for(key)), media_type="application/octet-stream")

    @app.post("/plan", response_model=S.PlanResponse)
    def plan(req: S.PlanRequest) -> S.PlanResponse:
        cfg = config_for(req, **{"planner.rho_q": req.rho_q, "optimizer.robot": req.robot})
        grid = grid_for(req.solm_id)
        try:
            out = pipeline.plan(cfg, load_scene(cfg), grid, req.start.planar(), req.goal.planar(),
                                baseline=req.baseline)
        except SearchError as exc:
            raise HTTPException(422, f"planning failed: {exc}") from None
        rows = pipeline.trajectory_rows(out.trajectory, grid)
        a, opt = out.audit, out.optimization
        return S.PlanResponse(
            path=[tuple(int(v) for v in c) for c in out.path.cells], path_cost=float(out.path.cost),
            duration=float(out.trajectory.total_time), columns=list(pipeline.TRAJECTORY_COLUMNS),
            trajectory=[[_num(v) for v in r] for r in rows],
            audit=S.AuditBody(v_lon=a.v_lon, v_lat=a.v_lat, omega=a.omega, min_sdf=a.min_sdf, slip=a.holonomy),
            converged=None if opt is None else opt.converged, warning=None if opt is None else opt.warning)

    @app.post("/validate", response_model=S.ValidateResponse)
    def validate(req: S.ValidateRequest) -> S.ValidateResponse:
        cfg = config_for(req, **{"validation.interval": req.interval, "validation.n": req.n})
        rows = np.asarray(req.trajectory, dtype=float)
        if rows.ndim != 2 or rows.shape[1] != len(pipeline.TRAJECTORY_COLUMNS):
            raise HTTPException(422, f"trajectory rows need {len(pipeline.TRAJECTORY_COLUMNS)} columns")
        res = pipeline.validate(cfg, load_scene(cfg), rows)
        return S.ValidateResponse(total=_num(res.total), rows=[[_num(v) for v in r] for r in res.rows])

    return app

"""Shared fixtures.  The two-corridor products are session-scoped because the
loss map takes around half a minute to build."""

from __future__ import annotations

import math

import numpy as np
import pytest

from solmplan import pipeline, solm
from solmplan.config import RunConfig
from solmplan.scene import OccupancyGrid2D
from solmplan.sdf import build_sdf


@pytest.fixture(scope="session")
def corridor_cfg() -> RunConfig:
    return RunConfig(scene="two_corridor", lidar="spin-360")


@pytest.fixture(scope="session")
def corridor_scene(corridor_cfg):
    return pipeline.scene_model(corridor_cfg)


@pytest.fixture(scope="session")
def corridor_sdf(corridor_scene):
    return build_sdf(corridor_scene.occupancy)


@pytest.fixture(scope="session")
def corridor_solm(corridor_cfg, corridor_scene):
    grid, _ = pipeline.build_solm(corridor_cfg, corridor_scene)
    return grid


@pytest.fixture
def small_grid() -> solm.SolmGrid:
    """Random 12 x 10 x 4 loss map without obstacles."""
    rng = np.random.default_rng(0)
    c = 4
    vals = rng.uniform(0.1, 1.0, (c, 10, 12)).astype("f4")
    return solm.SolmGrid((0.0, 0.0, -math.pi), (0.5, 0.5, 2 * math.pi / c), vals, np.zeros_like(vals, bool))


@pytest.fixture
def block_sdf():
    occ = np.zeros((25, 30), bool)
    occ[10:14, 12:16] = True
    return build_sdf(OccupancyGrid2D((0.0, 0.0), 0.2, 30, 25, occ))


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call":
                continue
            for key, text in getattr(rep, "user_properties", []):
                if key == "criterion":
                    lines.append(f"criterion {text.strip().split(' ', 1)[0]:>2}: {outcome.upper()[:4]}  "
                                 f"{text.strip().split(' ', 1)[1]}")
    for rep in terminalreporter.stats.get("failed", []):
        if rep.when == "call" and "test_criterion_" in rep.nodeid and not rep.user_properties:
            n = int(rep.nodeid.split("test_criterion_")[1][:2])
            lines.append(f"criterion {n:>2}: FAIL  (no measurement recorded)")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

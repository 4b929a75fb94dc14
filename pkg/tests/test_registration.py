import dataclasses

import numpy as np
import pytest

from solmplan.evaluation import scan_at
from solmplan.geometry import PlanarPose
from solmplan.lidar import LIDAR_PRESETS, Scan, simulate_scan
from solmplan.observation import ObservationParams
from solmplan.registration import MdeParams, RegistrationParams, mde, register, sample_disturbance
from solmplan.scene import SceneDescription, build_scene_model, canonical_scene
from test_scan_sim import ROOM

MID70 = LIDAR_PRESETS["mid70-like"]
FROZEN_HOUSES_MDE = 9.863672780131704e-05
QUIET = dataclasses.replace(LIDAR_PRESETS["spin-360"], sigma_r=0.0, max_range=20.0, v_fov_deg=90.0)


@pytest.fixture(scope="module")
def room():
    # an off-centre pillar breaks the room's symmetry
    prims = ROOM + [{"kind": "box", "center": [2.0, 1.5], "size": [0.6, 0.6, 4.0]}]
    return build_scene_model(SceneDescription.from_dict({"primitives": prims}), map_density=200)


@pytest.fixture(scope="module")
def houses():
    return build_scene_model(canonical_scene("houses"))


@pytest.fixture(scope="module")
def wall():
    return build_scene_model(canonical_scene("wall"))


MESH = RegistrationParams(observation=ObservationParams(association="mesh"))


class TestRegister:
    def test_fixed_point_in_closed_room(self, room):
        pose = PlanarPose(-1.0, 0.5, 0.4)
        scan = simulate_scan(room, pose, QUIET, 0)
        res = register(scan, room.cloud, pose, MESH)
        assert res.converged and res.iterations <= 2
        assert np.abs(res.pose.as_array() - pose.as_array()).max() < 1e-6

    def test_recovers_disturbance_in_closed_room(self, room):
        pose = PlanarPose(-1.0, 0.5, 0.4)
        scan = simulate_scan(room, pose, QUIET, 0)
        res = register(scan, room.cloud, PlanarPose(-0.95, 0.53, 0.42), MESH)
        assert res.converged
        # a few points near edges associate with the wrong face from the disturbed start
        assert np.abs(res.pose.as_array() - pose.as_array()).max() < 1e-3

    def test_idempotent(self, houses):
        pose = PlanarPose(0, 0, 0)
        scan = scan_at(houses, pose, MID70, 0)
        first = register(scan, houses.cloud, PlanarPose(0.03, -0.02, 0.01))
        again = register(scan, houses.cloud, first.pose)
        assert first.converged
        assert np.linalg.norm(again.pose.as_array() - first.pose.as_array()) < RegistrationParams().tol

    def test_wall_keeps_along_wall_error(self, wall):
        pose = PlanarPose(0, 0, 0)
        scan = scan_at(wall, pose, MID70, 0)
        res = register(scan, wall.cloud, PlanarPose(0.0, 0.1, 0.0))
        assert abs(res.pose.y) >= 0.09

    def test_empty_scan(self, houses):
        with pytest.raises(ValueError):
            register(Scan(np.zeros((0, 3)), np.zeros(0)), houses.cloud, PlanarPose())


class TestMde:
    def test_params(self):
        with pytest.raises(ValueError):
            MdeParams(n=0)
        with pytest.raises(ValueError):
            MdeParams(radius=-1)

    def test_disturbances_in_ball(self):
        for j in range(200):
            assert sample_disturbance(3, j, 0.1).norm() <= 0.1 + 1e-15
        assert sample_disturbance(3, 5, 0.1) == sample_disturbance(3, 5, 0.1)
        assert sample_disturbance(3, 5, 0.1) != sample_disturbance(4, 5, 0.1)

    def test_zero_radius(self, houses):
        # every start is the ground truth, so only the scan noise bias remains
        res = mde(houses, PlanarPose(), MID70, MdeParams(n=3, radius=0.0))
        assert np.abs(res.disturbances).max() == 0.0
        assert np.ptp(res.errors, axis=0).max() == 0.0
        assert res.value < 1e-3

    def test_deterministic(self, houses):
        p = MdeParams(n=5, seed=9)
        a = mde(houses, PlanarPose(), MID70, p)
        b = mde(houses, PlanarPose(), MID70, p)
        assert a.value == b.value
        assert np.array_equal(a.errors, b.errors)

    def test_frozen_houses_value(self, houses):
        res = mde(houses, PlanarPose(), MID70, MdeParams(n=10, seed=0))
        assert res.value == pytest.approx(FROZEN_HOUSES_MDE, rel=1e-6)

    def test_doubling_n_is_stable(self, houses):
        a = mde(houses, PlanarPose(), MID70, MdeParams(n=25, seed=0)).value
        b = mde(houses, PlanarPose(), MID70, MdeParams(n=50, seed=0)).value
        assert abs(b - a) < 0.3 * a

    def test_wall_error_is_along_wall(self, wall):
        res = mde(wall, PlanarPose(), MID70, MdeParams(n=20, seed=0))
        along = res.errors[:, 1] ** 2
        assert along.sum() > 0.9 * res.squared_errors.sum()

import dataclasses
import math

import numpy as np
import pytest

from solmplan.geometry import PlanarPose
from solmplan.lidar import LIDAR_PRESETS, Scan, simulate_scan
from solmplan.observation import ObservationParams, build_observations, fit_plane, point_to_plane
from solmplan.scene import MapCloud, SceneDescription, build_scene_model, canonical_scene

MID70 = LIDAR_PRESETS["mid70-like"]
QUIET = dataclasses.replace(MID70, sigma_r=0.0)
WALL_ONLY = SceneDescription.from_dict({"primitives": [
    {"kind": "wall", "start": [3.0, -6], "end": [3.0, 6], "height": 3.0, "thickness": 0.2, "base": -1.0}]})


class TestFitPlane:
    def test_exact_plane(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0.5, 0.3, 0]], float)
        f = fit_plane(pts)
        assert f.valid
        assert abs(abs(f.normal[2]) - 1) < 1e-12
        assert f.max_residual < 1e-15
        assert np.linalg.norm(f.normal) == pytest.approx(1.0, abs=1e-12)

    def test_collinear_invalid(self):
        pts = np.outer(np.arange(5.0), [1.0, 2.0, 0.5])
        assert not fit_plane(pts).valid

    def test_too_few_points(self):
        assert not fit_plane(np.zeros((2, 3))).valid

    def test_threshold(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0.5, 0.5, 0.5]], float)
        assert not fit_plane(pts, d_thresh=0.1).valid
        assert fit_plane(pts, d_thresh=1.0).valid

    def test_noisy_plane_normal(self):
        rng = np.random.default_rng(0)
        truth = np.array([0.3, -0.2, 1.0])
        truth /= np.linalg.norm(truth)
        e1 = np.cross(truth, [1, 0, 0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(truth, e1)
        worst = 0.0
        uv = np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5], [0.0, 0.0]])
        for _ in range(200):
            pts = uv[:, :1] * e1 + uv[:, 1:] * e2 + rng.normal(0, 0.005, (5, 1)) * truth
            f = fit_plane(pts)
            worst = max(worst, math.degrees(math.acos(min(1.0, abs(f.normal @ truth)))))
        assert worst < 2.0


@pytest.fixture(scope="module")
def houses():
    return build_scene_model(canonical_scene("houses"))


@pytest.fixture(scope="module")
def houses_obs(houses):
    pose = PlanarPose(0.2, -0.1, 0.15)
    scan = simulate_scan(houses, pose, MID70, 4)
    return scan, pose, build_observations(scan, houses.cloud, pose)


class TestBuildObservations:
    def test_shapes(self, houses_obs):
        scan, _, obs = houses_obs
        assert obs.A.shape == (obs.m, 3)
        assert 0 < obs.m <= len(scan)
        assert np.isfinite(obs.A).all() and np.isfinite(obs.b).all()
        np.testing.assert_allclose(np.linalg.norm(obs.normals, axis=1), 1.0, atol=1e-12)

    def test_jacobian_finite_differences(self, houses_obs):
        scan, pose, obs = houses_obs
        x = pose.as_array()
        h = 1e-5
        fd = np.zeros_like(obs.A)
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            hp = point_to_plane(scan, PlanarPose(*(x + e)), obs.normals, obs.anchors, obs.scan_index)
            hm = point_to_plane(scan, PlanarPose(*(x - e)), obs.normals, obs.anchors, obs.scan_index)
            fd[:, i] = (hp - hm) / (2 * h)
        rel = np.abs(fd - obs.A) / np.maximum(np.abs(obs.A), 1.0)
        assert rel.max() < 1e-5

    def test_residual_matches_b(self, houses_obs):
        scan, pose, obs = houses_obs
        h = point_to_plane(scan, pose, obs.normals, obs.anchors, obs.scan_index)
        np.testing.assert_allclose(obs.b, -h, atol=1e-15)

    def test_reanchoring_invariance(self, houses_obs):
        scan, pose, obs = houses_obs
        rng = np.random.default_rng(1)
        # any other point on the same plane: move the anchor within the plane
        t = rng.normal(size=(obs.m, 3))
        t -= np.einsum("ij,ij->i", t, obs.normals)[:, None] * obs.normals
        h = point_to_plane(scan, pose, obs.normals, obs.anchors + t, obs.scan_index)
        np.testing.assert_allclose(h, -obs.b, atol=1e-12)

    def test_point_on_plane_zero_residual(self):
        cloud = MapCloud.from_points(np.array(
            [[1, -0.2, 0], [1, 0.2, 0], [1, 0, 0.2], [1, 0.1, -0.1], [1, -0.1, 0.1]], float))
        scan = Scan(np.array([[1.0, 0.1, 0.0]]), np.array([1.0]), 0.0)
        obs = build_observations(scan, cloud, PlanarPose())
        assert obs.m == 1
        assert obs.b[0] == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_allclose(np.abs(obs.A[0, :2]), [1.0, 0.0], atol=1e-12)

    def test_sparse_neighbourhood_skipped(self):
        rng = np.random.default_rng(0)
        near = np.column_stack([np.full(30, 2.0), rng.uniform(-0.3, 0.3, 30), rng.uniform(-0.3, 0.3, 30)])
        far = np.array([[8.0, 5.0, 0.0], [8.0, 5.1, 0.0], [8.0, 5.0, 0.1]])
        cloud = MapCloud.from_points(np.vstack([near, far]))
        pts = np.array([[2.0, 0.0, 0.0], [2.0, 0.1, 0.1], [8.0, 5.0, 0.05]])
        scan = Scan(pts, np.linalg.norm(pts, axis=1), 0.0)
        obs = build_observations(scan, cloud, PlanarPose())
        assert obs.m == 2
        assert obs.scan_index.tolist() == [0, 1]

    def test_empty_scan_rejected(self, houses):
        with pytest.raises(ValueError):
            build_observations(Scan(np.zeros((0, 3)), np.zeros(0)), houses.cloud, PlanarPose())

    def test_no_association_is_empty(self):
        cloud = MapCloud.from_points(np.array([[50.0, 50, 0], [50, 51, 0], [51, 50, 0], [51, 51, 0], [50, 50, 1]]))
        scan = Scan(np.array([[1.0, 0, 0]]), np.array([1.0]))
        assert build_observations(scan, cloud, PlanarPose()).empty

    def test_mesh_association(self, houses):
        pose = PlanarPose(0, 0, 0)
        scan = simulate_scan(houses, pose, QUIET, 0)
        obs = build_observations(scan, houses.cloud, pose, ObservationParams(association="mesh"))
        assert obs.m > 0.9 * len(scan)
        # noise-free scan against exact triangle planes; points near an edge may pick the neighbouring face
        assert np.mean(np.abs(obs.b) < 1e-9) > 0.95

    def test_wall_offset_shifts_mean_b(self):
        sm = build_scene_model(WALL_ONLY, map_density=200)
        pose = PlanarPose(0, 0, 0)
        scan = simulate_scan(sm, pose, QUIET, 0)
        deltas = np.linspace(-0.05, 0.05, 5)
        means = []
        for d in deltas:
            # wall normals face the sensor, i.e. along -x
            obs = build_observations(scan, sm.cloud, PlanarPose(-d, 0.0, 0.0))
            wall = np.abs(obs.normals[:, 0]) > 0.9
            means.append(obs.b[wall].mean())
        slope = np.polyfit(deltas, means, 1)[0]
        assert slope == pytest.approx(-1.0, rel=0.05)

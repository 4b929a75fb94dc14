import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from solmplan.geometry import (AngleBoundaryWarning, PlanarPose, PlanarTwist, between, compose, exp_se2,
                               inverse, log_se2, wrap_angle, wrap_angles)

coord = st.floats(-50, 50, allow_nan=False)
angle = st.floats(-10, 10, allow_nan=False)
poses = st.builds(PlanarPose, coord, coord, angle)


def close(a: PlanarPose, b: PlanarPose, tol: float) -> bool:
    return (abs(a.x - b.x) <= tol and abs(a.y - b.y) <= tol
            and abs(math.remainder(a.theta - b.theta, 2 * math.pi)) <= tol)


class TestWrap:
    def test_half_open_interval(self):
        assert wrap_angle(math.pi) == -math.pi
        assert wrap_angle(-math.pi) == -math.pi
        assert wrap_angle(3 * math.pi) == -math.pi
        assert wrap_angle(0.0) == 0.0

    @given(angle)
    def test_range(self, t):
        w = wrap_angle(t)
        assert -math.pi <= w < math.pi
        assert abs(math.remainder(w - t, 2 * math.pi)) < 1e-12

    def test_vectorized_matches_scalar(self):
        t = np.linspace(-12, 12, 1001)
        t = np.append(t, [math.pi, -math.pi])
        np.testing.assert_allclose(wrap_angles(t), [wrap_angle(v) for v in t], atol=1e-12)

    def test_constructor_normalizes(self):
        assert PlanarPose(0, 0, 2 * math.pi + 0.25).theta == pytest.approx(0.25)
        assert PlanarPose(0, 0, math.pi).theta == -math.pi


class TestCompose:
    def test_identity(self):
        p = PlanarPose(1.5, -2.0, 0.7)
        assert compose(PlanarPose.identity(), p) == p

    def test_translation(self):
        assert compose(PlanarPose(1, 0, 0), PlanarPose(1, 0, 0)) == PlanarPose(2, 0, 0)

    def test_rotated_frame(self):
        r = compose(PlanarPose(0, 0, math.pi / 2), PlanarPose(1, 0, 0))
        assert close(r, PlanarPose(0, 1, math.pi / 2), 1e-15)

    @given(poses)
    def test_inverse_round_trip(self, p):
        assert close(compose(p, inverse(p)), PlanarPose.identity(), 1e-12 * max(1.0, abs(p.x) + abs(p.y)))

    @given(poses, poses, poses)
    def test_associative(self, a, b, c):
        tol = 1e-12 * (1 + abs(a.x) + abs(a.y) + abs(b.x) + abs(b.y) + abs(c.x) + abs(c.y))
        assert close(compose(compose(a, b), c), compose(a, compose(b, c)), tol)

    def test_between(self):
        a, b = PlanarPose(1, 2, 0.3), PlanarPose(-1, 0.5, -2.0)
        assert close(compose(a, between(a, b)), b, 1e-12)

    def test_matrix_matches_compose(self):
        a, b = PlanarPose(1, 2, 0.3), PlanarPose(-1, 0.5, -2.0)
        m = a.matrix() @ b.matrix()
        c = compose(a, b)
        np.testing.assert_allclose(m, c.matrix(), atol=1e-14)


class TestExpLog:
    def test_log_identity(self):
        assert log_se2(PlanarPose.identity()).as_array().tolist() == [0.0, 0.0, 0.0]

    def test_exp_pure_rotation(self):
        p = exp_se2(PlanarTwist(0, 0, math.pi / 2))
        assert (p.x, p.y) == (0.0, 0.0)
        assert p.theta == pytest.approx(math.pi / 2, abs=1e-15)

    def test_exp_pure_translation(self):
        assert exp_se2(PlanarTwist(0.3, -0.4, 0.0)) == PlanarPose(0.3, -0.4, 0.0)

    def test_exp_quarter_turn_arc(self):
        # unit-speed arc of a quarter circle with radius 2/pi ends at (2/pi, 2/pi)
        p = exp_se2(PlanarTwist(1.0, 0.0, math.pi / 2))
        np.testing.assert_allclose([p.x, p.y], [2 / math.pi, 2 / math.pi], atol=1e-15)

    def test_round_trip_sweep(self):
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(1000):
            t = PlanarTwist(*rng.uniform(-5, 5, 2), rng.uniform(-3, 3))
            back = log_se2(exp_se2(t)).as_array()
            worst = max(worst, float(np.abs(back - t.as_array()).max()))
        assert worst < 1e-9

    @given(poses)
    @settings(max_examples=200)
    def test_exp_of_log(self, p):
        if p.theta == -math.pi:
            return
        assert close(exp_se2(log_se2(p)), p, 1e-9)

    def test_small_angle_series(self):
        t = PlanarTwist(0.2, 0.1, 1e-8)
        np.testing.assert_allclose(log_se2(exp_se2(t)).as_array(), t.as_array(), atol=1e-15)

    def test_boundary_flagged(self):
        with pytest.warns(AngleBoundaryWarning):
            log_se2(PlanarPose(1.0, 0.0, -math.pi))

    def test_translation_norm_rotation_invariant(self):
        p = PlanarPose(0.3, -0.7, 0.0)
        r = PlanarPose(0, 0, 1.1)
        conj = compose(compose(r, p), inverse(r))
        assert log_se2(conj).norm() == pytest.approx(log_se2(p).norm(), abs=1e-15)

    def test_weighted_norm(self):
        assert PlanarTwist(3, 4, 0.5).norm(length=2.0) == pytest.approx(math.sqrt(26))

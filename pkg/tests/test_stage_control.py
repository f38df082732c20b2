import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from hmcontrol.errors import AntipodalError, DomainError, StabilityError
from hmcontrol.geometry import E3, is_rotation
from hmcontrol.stage_control import (
    build_leg_schedule,
    lambda_profile,
    lambda_slope,
    required_lambda,
    smoothstep,
    stage_of,
    steps_per_stage,
    waypoints,
)

E1 = np.array([1.0, 0.0, 0.0])


@pytest.fixture
def schedule():
    return build_leg_schedule(E3, E3, 0.3, 0.5, 1e-3)


# ============================================================
# Field amplitude
# ============================================================
class TestLambdaProfile:
    def test_stage_values(self, schedule):
        T0, Lam = schedule.T0, schedule.Lambda
        assert lambda_profile(0.5 * T0, schedule) == 0.0
        assert lambda_profile(1.5 * T0, schedule) == pytest.approx(0.5 * Lam)
        assert lambda_profile(2.5 * T0, schedule) == Lam
        assert lambda_profile(3.5 * T0, schedule) == pytest.approx(0.5 * Lam)
        assert lambda_profile(4.5 * T0, schedule) == 0.0

    def test_continuous_at_junctions(self, schedule):
        for k in range(1, 5):
            t = k * schedule.T0
            left = lambda_profile(t - 1e-12, schedule)
            right = lambda_profile(t + 1e-12, schedule)
            assert left == pytest.approx(right, abs=1e-6 * schedule.Lambda)

    @given(x=st.floats(min_value=0.0, max_value=5.0))
    @settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
    def test_bounded_by_amplitude(self, schedule, x):
        lam = lambda_profile(x * schedule.T0, schedule)
        assert 0.0 <= lam <= schedule.Lambda

    def test_ramps_are_monotone(self, schedule):
        T0 = schedule.T0
        up = [lambda_profile(T0 * (1.0 + s), schedule) for s in np.linspace(0.0, 1.0, 51)]
        down = [lambda_profile(T0 * (3.0 + s), schedule) for s in np.linspace(0.0, 1.0, 51)]
        assert np.all(np.diff(up) >= 0.0)
        assert np.all(np.diff(down) <= 0.0)

    def test_slope_matches_finite_differences(self, schedule):
        T0 = schedule.T0
        eps = 1e-7 * T0
        for x in (1.2, 1.5, 1.9, 3.1, 3.6):
            t = x * T0
            fd = (lambda_profile(t + eps, schedule) - lambda_profile(t - eps, schedule)) / (2 * eps)
            assert lambda_slope(t, schedule) == pytest.approx(fd, rel=1e-5)
        for k in range(6):
            assert lambda_slope(k * T0, schedule) == 0.0

    def test_outside_field_window(self, schedule):
        with pytest.raises(DomainError):
            lambda_profile(5.5 * schedule.T0, schedule)
        with pytest.raises(DomainError):
            lambda_profile(-0.1, schedule)

    def test_smoothstep_endpoints(self):
        assert smoothstep(0.0) == 0.0
        assert smoothstep(1.0) == 1.0
        assert smoothstep(0.5) == 0.5


class TestRequiredLambda:
    def test_reaches_target_decay(self):
        eps0, T0, eps4 = 0.5, 0.05, 1e-3
        lam = required_lambda(eps0, T0, eps4)
        assert lam == pytest.approx(math.sqrt(math.log(1000.0) / 0.025))
        assert math.exp(-lam * lam * eps0 * T0) == pytest.approx(eps4)

    @pytest.mark.parametrize("eps0,T0,eps4", [(0.0, 0.05, 1e-3), (1.5, 0.05, 1e-3),
                                              (0.5, 0.0, 1e-3), (0.5, 0.05, 1.0)])
    def test_rejects_bad_arguments(self, eps0, T0, eps4):
        with pytest.raises(DomainError):
            required_lambda(eps0, T0, eps4)


# ============================================================
# Stages and waypoints
# ============================================================
class TestStages:
    def test_steps_per_stage(self):
        assert steps_per_stage(0.05, 1e-4) == 500
        assert steps_per_stage(0.05, 3e-4) == 167
        assert steps_per_stage(1e-5, 1e-4) == 1

    def test_stage_of(self, schedule):
        T0 = schedule.T0
        assert stage_of(0.0, schedule) == 0
        assert stage_of(2.0 * T0, schedule) == 2
        assert stage_of(5.5 * T0, schedule) == 5
        assert stage_of(6.0 * T0, schedule) == 5

    def test_waypoints_trisect_the_geodesic(self):
        p1, p2 = waypoints(E3, E1)
        angle = math.pi / 6.0
        for q in (p1, p2):
            assert np.linalg.norm(q) == pytest.approx(1.0)
        assert E3 @ p1 == pytest.approx(math.cos(angle))
        assert p1 @ p2 == pytest.approx(math.cos(angle))
        assert p2 @ E1 == pytest.approx(math.cos(angle))
        assert abs(np.cross(E3, E1) @ p1) < 1e-14

    def test_waypoints_of_equal_endpoints(self):
        p1, p2 = waypoints(E1, E1)
        assert np.allclose(p1, E1) and np.allclose(p2, E1)

    def test_waypoints_reject_antipodal_endpoints(self):
        with pytest.raises(AntipodalError):
            waypoints(E3, -E3)


class TestLegSchedule:
    def test_layout(self):
        s = build_leg_schedule(E3, E1, 0.3, 0.5)
        assert s.T0 == pytest.approx(0.05)
        assert s.boundaries[-1] == pytest.approx(0.3)
        assert s.field_horizon == pytest.approx(0.25)
        assert is_rotation(s.rotation, 1e-12)
        assert np.allclose(s.rotation @ E1, E3)
        assert np.allclose(s.waypoints[0], E3) and np.allclose(s.waypoints[-1], E1)
        assert s.to_dict()["Lambda"] == pytest.approx(s.Lambda)

    def test_antipodal_target_still_gets_a_rotation(self):
        s = build_leg_schedule(E1, -E3, 0.3, 0.5)
        assert np.allclose(s.rotation @ -E3, E3)

    def test_lambda_override(self):
        assert build_leg_schedule(E3, E3, 0.3, 0.5, Lambda=4.0).Lambda == 4.0

    def test_stability_guard(self):
        with pytest.raises(StabilityError):
            build_leg_schedule(E3, E3, 0.3, 0.5, dt=1e-2)

    def test_rejects_non_positive_horizon(self):
        with pytest.raises(DomainError):
            build_leg_schedule(E3, E3, 0.0, 0.5)

import json

import numpy as np
import pytest

from hmcontrol import logs
from hmcontrol.geometry import rotate_field, stereo_invert
from hmcontrol.grid import l2_norm, w1inf_norm
from hmcontrol.initial_data import tilted_cone
from hmcontrol.monitors import StageMonitor, TrajectoryReport
from hmcontrol.stage_control import build_leg_schedule
from hmcontrol.steering import NullStageSettings, run_leg, run_null_stage, sup_distance

E1 = np.array([1.0, 0.0, 0.0])
E3 = np.array([0.0, 0.0, 1.0])
# cyclic permutation e1 -> e2 -> e3 -> e1; exact in floating point
CYCLE = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])

CHEAP = dict(steps=5, penalty=1e-4, hum_tol=1e-8, outer_maxit=3)


def _events(path):
    with open(path) as f:
        return json.load(f)


# ============================================================
# Null-control stage
# ============================================================
class TestNullStage:
    def test_chart_cap_warns_once_per_leg(self, grid1d, tmp_path):
        path = str(tmp_path / "events.json")
        logs.configure(log_file=path, quiet=True)
        schedule = build_leg_schedule(E3, E3, 0.06, 0.5, dt=1e-4)
        d = tilted_cone(grid1d, E3, 5.0)
        monitor = StageMonitor(grid1d, d, E3, leg=2)
        settings = NullStageSettings(chart_cap=1e-12, steps=2, penalty=1e-4, hum_tol=1e-8, outer_maxit=2)
        run_null_stage(grid1d, d, schedule, 1e-4, monitor, settings)
        warnings = [e for e in _events(path) if e["message"] == "Chart magnitude above cap"]
        assert len(warnings) == 1
        assert warnings[0]["level"] == "WARNING"
        assert warnings[0]["leg"] == 2
        assert warnings[0]["cap"] == 1e-12

    def test_default_cap_stays_silent(self, grid1d, tmp_path):
        path = str(tmp_path / "events.json")
        logs.configure(log_file=path, quiet=True)
        schedule = build_leg_schedule(E3, E3, 0.06, 0.5, dt=1e-4)
        d = tilted_cone(grid1d, E3, 5.0)
        monitor = StageMonitor(grid1d, d, E3)
        run_null_stage(grid1d, d, schedule, 1e-4, monitor, NullStageSettings(**CHEAP))
        assert not any(e["message"] == "Chart magnitude above cap" for e in _events(path))
        assert np.isfinite(monitor.report.to_frame()["sup_chart"]).all()


# ============================================================
# Legs
# ============================================================
class TestLeg:
    def test_records_chart_size_before_null_control(self, grid1d):
        d0 = tilted_cone(grid1d, E3, 60.0)
        leg = run_leg(grid1d, d0, E3, E3, 0.3, 1e-4, 0, TrajectoryReport(),
                      settings=NullStageSettings(**CHEAP))
        v = stereo_invert(rotate_field(leg.schedule.rotation, leg.d_after_field))
        assert leg.chart_w1inf_before == pytest.approx(w1inf_norm(grid1d, v), rel=1e-12)
        assert leg.chart_norm_before == pytest.approx(l2_norm(grid1d, v), rel=1e-12)
        assert leg.chart_w1inf_before >= leg.chart_norm_before
        assert leg.final_error == pytest.approx(sup_distance(leg.d_final, E3))

    def test_full_leg_commutes_with_rotations(self, grid1d):
        d0 = tilted_cone(grid1d, E3, 60.0)
        settings = NullStageSettings(**CHEAP)
        plain = run_leg(grid1d, d0, E3, E3, 0.3, 1e-4, 0, TrajectoryReport(), settings=settings)
        turned = run_leg(grid1d, rotate_field(CYCLE, d0), E1, E1, 0.3, 1e-4, 0, TrajectoryReport(),
                         settings=settings)
        assert turned.schedule.Lambda == pytest.approx(plain.schedule.Lambda, rel=1e-12)
        assert np.max(np.abs(rotate_field(CYCLE, plain.d_after_field) - turned.d_after_field)) < 1e-10
        assert np.max(np.abs(rotate_field(CYCLE, plain.d_final) - turned.d_final)) < 1e-10
        assert turned.final_error == pytest.approx(plain.final_error, abs=1e-10)

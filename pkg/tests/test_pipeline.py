import json
import os
from pathlib import Path

import pytest
import yaml
from typer.testing import CliRunner

from hmcontrol.config import load_config, parse_config
from hmcontrol.errors import ConfigError
from hmcontrol.monitors import REPORT_COLUMNS
from hmcontrol.pipeline import EQUIVALENCE_COLUMNS, run_experiment
from hmcontrol.snapshots import read_snapshot, read_table
from main import EXIT_ERROR, EXIT_OK, app

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
SMALL_GRID = {"dim": 1, "extents": [1.0], "counts": [41]}

runner = CliRunner()


def _config(tmp_path, experiment, **sections) -> str:
    data = {"experiment": experiment, "seed": 0, "grid": SMALL_GRID, **sections}
    path = tmp_path / f"{experiment}.yaml"
    path.write_text(yaml.safe_dump(data))
    return str(path)


def _summary(out):
    frame, header = read_table(os.path.join(out, "summary.csv"))
    return frame, header


# ============================================================
# CLI surface
# ============================================================
class TestCli:
    def test_verify_geometry(self, tmp_path):
        out = str(tmp_path / "geometry")
        result = runner.invoke(app, ["verify-geometry", "--config", str(CONFIG_DIR / "verify-geometry.yaml"),
                                     "--out", out, "--seed", "3"])
        assert result.exit_code == EXIT_OK
        frame, header = _summary(out)
        assert list(frame.columns) == ["check", "measured", "bound", "passed"]
        assert frame["passed"].all()
        assert header["seed"] == 3
        assert os.path.exists(os.path.join(out, "geometry.csv"))
        with open(os.path.join(out, "events.json")) as f:
            events = json.load(f)
        assert any(e["message"] == "Experiment started" for e in events)
        assert all(e["seed"] == 3 and e["experiment"] == "verify-geometry" for e in events)
        assert len({e["config_hash"] for e in events}) == 1

    def test_unknown_experiment(self, tmp_path):
        result = runner.invoke(app, ["warp", "--config", str(CONFIG_DIR / "stage1.yaml")])
        assert result.exit_code == EXIT_ERROR

    def test_invalid_grid_leaves_no_output(self, tmp_path):
        out = tmp_path / "never"
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump({"experiment": "stage1", "grid": {"dim": 1, "extents": [1.0],
                                                                          "counts": [2]}}))
        result = runner.invoke(app, ["stage1", "--config", str(path), "--out", str(out)])
        assert result.exit_code == EXIT_ERROR
        assert not out.exists()

    def test_missing_config(self, tmp_path):
        result = runner.invoke(app, ["hum", "--config", str(tmp_path / "absent.yaml")])
        assert result.exit_code == EXIT_ERROR

    def test_unreadable_initial_snapshot_is_a_config_error(self, tmp_path):
        snap = tmp_path / "d0.snap"
        snap.write_bytes(b'{"dimension": 1, "components": 3}\n' + bytes(41 * 3 * 8))
        path = _config(tmp_path, "stage1", initial_data={"preset": "file", "path": str(snap)})
        out = tmp_path / "never"
        result = runner.invoke(app, ["stage1", "--config", path, "--out", str(out)])
        assert result.exit_code == EXIT_ERROR
        assert not out.exists()


# ============================================================
# Experiments on a small grid
# ============================================================
class TestExperiments:
    def test_equivalence(self, tmp_path):
        path = _config(tmp_path, "equivalence", solver={"dt": 1e-4},
                       equivalence={"horizon": 0.05, "chart_amplitude": 0.2, "control_amplitude": 1.0})
        out = str(tmp_path / "eq")
        result = runner.invoke(app, ["equivalence", "--config", path, "--out", out])
        assert result.exit_code == EXIT_OK
        frame, _ = read_table(os.path.join(out, "equivalence.csv"))
        assert frame["error"].iloc[0] < 5e-3

    def test_equivalence_order_miss_fails_the_run(self, tmp_path):
        # at dx_dt = 1e-3 the splitting error swamps the dx refinement
        cfg = parse_config({
            "experiment": "equivalence", "grid": {"dim": 1, "extents": [1.0], "counts": [21]},
            "output_dir": str(tmp_path / "eq"), "solver": {"dt": 1e-4},
            "equivalence": {"horizon": 0.01, "chart_amplitude": 0.2, "refine": True,
                            "dx_counts": [21], "dx_dt": 1e-3},
        })
        result = run_experiment(cfg)
        assert result.status == 1
        checks = result.checks.set_index("check")
        assert not checks.loc["equivalence_order_dx", "passed"]
        assert checks.loc["equivalence_order_dx", "bound"] == 1.8
        frame, _ = read_table(os.path.join(result.out_dir, "equivalence.csv"))
        assert list(frame.columns) == EQUIVALENCE_COLUMNS
        assert list(frame["resolution"]) == ["base", "dx-coarse", "dx/2", "dt/2"]
        assert frame.set_index("resolution").loc["dx-coarse", "dx"] == pytest.approx(0.05)

    def test_equivalence_config_rejects_mismatched_dx_counts(self):
        with pytest.raises(ConfigError):
            parse_config({"experiment": "equivalence", "grid": SMALL_GRID,
                          "equivalence": {"refine": True, "dx_counts": [21, 21]}})

    @pytest.mark.slow
    def test_shipped_equivalence_preset_meets_both_orders(self, tmp_path):
        result = run_experiment(load_config(str(CONFIG_DIR / "equivalence.yaml")), str(tmp_path / "eq"))
        checks = result.checks.set_index("check")
        assert checks.loc["equivalence_order_dx", "measured"] >= 1.8
        assert checks.loc["equivalence_order_dt", "measured"] >= 0.8
        assert result.status == 0

    def test_hum(self, tmp_path):
        cfg = parse_config({
            "experiment": "hum", "grid": SMALL_GRID, "output_dir": str(tmp_path / "hum"),
            "solver": {"null_steps": 10, "penalty": 1e-8, "hum_tol": 1e-8, "outer_tol": 1e-6},
            "hum": {"horizon": 0.1, "steps": 40, "penalty": 1e-6, "penalty_sweep": [1e-2, 1e-4, 1e-6],
                    "picard_amplitude": 1e-3, "picard_horizon": 0.05},
        })
        result = run_experiment(cfg)
        assert result.status == 0
        assert {"hum.csv", "penalty_sweep.csv", "picard.csv", "hum_control.snap",
                "picard_control.snap", "summary.csv"} <= set(result.artifacts)
        control = read_snapshot(os.path.join(result.out_dir, "hum_control.snap"))
        assert control.data.shape == (40, 41, 2)
        assert len(control.header["times"]) == 40

    @pytest.mark.slow
    def test_stage1(self, tmp_path):
        path = _config(tmp_path, "stage1", schedule={"horizon": 1.2, "lambda_sweep": [1.0, 2.0],
                                                         "refine_lambdas": [1.0]},
                       solver={"dt": 1e-4})
        out = str(tmp_path / "stage1")
        result = runner.invoke(app, ["stage1", "--config", path, "--out", out])
        assert result.exit_code == EXIT_OK
        trajectory, _ = read_table(os.path.join(out, "trajectory.csv"))
        assert list(trajectory.columns) == REPORT_COLUMNS
        assert trajectory["norm_dev"].max() <= 1e-9
        sweep, _ = read_table(os.path.join(out, "lambda_sweep.csv"))
        assert list(sweep["Lambda"]) == [1.0, 2.0]
        assert (sweep["gradient_peak_time"] > 0.0).all()
        refinement, _ = read_table(os.path.join(out, "refinement.csv"))
        assert list(refinement["resolution"]) == ["base", "dx/2", "dt/2"]
        assert (refinement["gradient_excess"] >= 0.0).all()
        summary, _ = _summary(out)
        assert {"gradient_excess[Lambda=1,dx/2]", "energy_excess[Lambda=1,dt/2]"} <= set(summary["check"])

    @pytest.mark.slow
    def test_steer(self, tmp_path):
        path = _config(tmp_path, "steer", schedule={"horizon": 1.2, "target": [1.0, 0.0, 0.0]},
                       solver={"dt": 1e-4, "null_steps": 10, "hum_tol": 1e-8, "outer_tol": 1e-6})
        out = str(tmp_path / "steer")
        result = runner.invoke(app, ["steer", "--config", path, "--out", out])
        assert result.exit_code == EXIT_OK
        legs, _ = read_table(os.path.join(out, "legs.csv"))
        assert list(legs["leg"]) == [0, 1, 2, 3]
        assert (legs["chart_w1inf_before"] >= legs["chart_norm_before"]).all()
        summary, _ = _summary(out)
        assert {f"chart_smallness[leg={k}]" for k in range(4)} <= set(summary["check"])
        final = read_snapshot(os.path.join(out, "leg3_final.snap"))
        assert final.time == pytest.approx(1.2)
        assert abs(final.data[..., 0] - 1.0).max() < 1e-2


def test_repeated_runs_are_bit_identical(tmp_path):
    path = _config(tmp_path, "equivalence", solver={"dt": 1e-4},
                   equivalence={"horizon": 0.01, "chart_amplitude": 0.2})
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert runner.invoke(app, ["equivalence", "--config", path, "--out", str(out)]).exit_code == EXIT_OK
        outputs.append({f: (out / f).read_bytes() for f in ("equivalence.csv", "summary.csv")})
    assert outputs[0] == outputs[1]


@pytest.mark.slow
def test_two_dimensional_hum_preset_reaches_its_target(tmp_path):
    result = run_experiment(load_config(str(CONFIG_DIR / "hum-2d.yaml")), str(tmp_path / "hum2d"))
    checks = result.checks.set_index("check")
    assert checks.loc["hum_terminal_ratio", "passed"]
    assert "picard_converged" not in checks.index

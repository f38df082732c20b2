import json

import numpy as np
import pytest

from hmcontrol.errors import ConfigError
from hmcontrol.grid import Grid
from hmcontrol.initial_data import PRESETS, initial_data, random_smooth, tilted_cone
from hmcontrol.snapshots import write_snapshot


def _unit_norm(d):
    return np.max(np.abs(np.sum(d * d, axis=-1) - 1.0))


class TestPresets:
    @pytest.mark.parametrize("preset", ["constant", "tilted-cone", "random-smooth"])
    def test_unit_and_in_hemisphere(self, grid2d, preset):
        d0, eps0 = initial_data(preset, grid2d, seed=3, axis=[0.0, 1.0, 1.0], cone_angle_deg=50.0, modes=2)
        axis = np.array([0.0, 1.0, 1.0]) / np.sqrt(2.0)
        assert d0.shape == grid2d.shape + (3,)
        assert _unit_norm(d0) < 1e-12
        assert eps0 == pytest.approx(float(np.min(d0 @ axis)))
        assert eps0 >= np.cos(np.radians(50.0)) - 1e-12

    def test_cone_reaches_its_angle(self, grid1d):
        _, eps0 = initial_data("tilted-cone", grid1d, cone_angle_deg=60.0)
        assert eps0 == pytest.approx(0.5)

    def test_cone_has_zero_normal_derivative(self):
        grid = Grid.build([1.0], [201])
        d = tilted_cone(grid, [0.0, 0.0, 1.0], 60.0, modes=2)
        h = grid.spacing[0]
        assert np.linalg.norm(d[1] - d[0]) < 20.0 * h * h
        assert np.linalg.norm(d[-1] - d[-2]) < 20.0 * h * h

    def test_random_smooth_is_seeded(self, grid1d):
        a = random_smooth(grid1d, [0.0, 0.0, 1.0], 40.0, 3, seed=11)
        b = random_smooth(grid1d, [0.0, 0.0, 1.0], 40.0, 3, seed=11)
        c = random_smooth(grid1d, [0.0, 0.0, 1.0], 40.0, 3, seed=12)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_antipodal_axis(self, grid1d):
        d0, eps0 = initial_data("tilted-cone", grid1d, axis=[0.0, 0.0, -1.0], cone_angle_deg=30.0)
        assert eps0 == pytest.approx(np.cos(np.radians(30.0)))
        assert np.all(d0[..., 2] < 0.0)

    def test_from_file(self, grid1d, tmp_path):
        d, _ = initial_data("tilted-cone", grid1d)
        path = str(tmp_path / "d0.snap")
        write_snapshot(path, grid1d, d, 0.0)
        loaded, _ = initial_data("file", grid1d, path=path)
        assert np.array_equal(loaded, d)

    def test_presets_are_listed(self):
        assert set(PRESETS) == {"constant", "tilted-cone", "random-smooth", "file"}


class TestRejections:
    def test_angle_out_of_range(self, grid1d):
        with pytest.raises(ConfigError):
            initial_data("tilted-cone", grid1d, cone_angle_deg=90.0)

    def test_unknown_preset(self, grid1d):
        with pytest.raises(ConfigError):
            initial_data("spiral", grid1d)

    def test_file_preset_without_path(self, grid1d):
        with pytest.raises(ConfigError):
            initial_data("file", grid1d)

    def test_file_on_wrong_grid(self, grid1d, grid2d, tmp_path):
        d, _ = initial_data("constant", grid2d)
        path = str(tmp_path / "d0.snap")
        write_snapshot(path, grid2d, d, 0.0)
        with pytest.raises(ConfigError):
            initial_data("file", grid1d, path=path)

    def test_missing_file(self, grid1d, tmp_path):
        with pytest.raises(ConfigError):
            initial_data("file", grid1d, path=str(tmp_path / "absent.snap"))

    def test_zero_axis(self, grid1d):
        with pytest.raises(ConfigError):
            initial_data("constant", grid1d, axis=[0.0, 0.0, 0.0])

    def test_snapshot_header_without_counts(self, grid1d, tmp_path):
        path = tmp_path / "d0.snap"
        header = {"dimension": 1, "components": 3, "time": 0.0}
        path.write_bytes((json.dumps(header) + "\n").encode("utf-8") + np.ones(41 * 3).astype("<f8").tobytes())
        with pytest.raises(ConfigError):
            initial_data("file", grid1d, path=str(path))

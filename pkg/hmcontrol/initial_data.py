# initial_data.py
"""
Initial director presets. Every preset satisfies the hemisphere condition
min d0.axis > 0 and has zero normal derivative on the boundary (built from
cosine modes).
"""

import math
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError
from .geometry import E3, align_rotation, normalized, rotate_field
from .grid import Grid
from .snapshots import read_snapshot

PRESETS = ("constant", "tilted-cone", "random-smooth", "file")


def _profile(grid: Grid) -> np.ndarray:
    """m(x) = prod_k (1 - cos(pi x_k / L_k)) / 2; 0 at the origin corner, exactly 1 at the far one."""
    m = np.ones(grid.shape)
    for x, L in zip(grid.coords, grid.extents):
        m = m * 0.5 * (1.0 - np.cos(np.pi * x / L))
    return m


def _cosine_series(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    """sum over mode tuples k of c_k prod cos(k_j pi x_j / L_j)."""
    out = np.zeros(grid.shape)
    for k, c in np.ndenumerate(coeffs):
        term = np.full(grid.shape, c)
        for kj, x, L in zip(k, grid.coords, grid.extents):
            term = term * np.cos(kj * np.pi * x / L)
        out += term
    return out


def _from_angles(theta: np.ndarray, phi: np.ndarray, axis: np.ndarray) -> np.ndarray:
    st = np.sin(theta)
    d = np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)
    if np.array_equal(axis, E3):
        return d
    return rotate_field(align_rotation(E3, axis), d)


def _check_angle(cone_angle_deg: float) -> float:
    if not (0.0 <= cone_angle_deg < 90.0):
        raise ConfigError(f"cone_angle_deg must lie in [0, 90), got {cone_angle_deg}")
    return math.radians(cone_angle_deg)


def tilted_cone(grid: Grid, axis, cone_angle_deg: float, modes: int = 1) -> np.ndarray:
    alpha = _check_angle(cone_angle_deg)
    theta = alpha * _profile(grid)
    phi = np.zeros(grid.shape)
    for k in range(1, modes + 1):
        for x, L in zip(grid.coords, grid.extents):
            phi += (0.5 / k) * np.cos(k * np.pi * x / L)
    return _from_angles(theta, phi, axis)


def random_smooth(grid: Grid, axis, cone_angle_deg: float, modes: int, seed: int) -> np.ndarray:
    alpha = _check_angle(cone_angle_deg)
    rng = np.random.default_rng(seed)
    shape = (modes + 1,) * grid.dim
    decay = np.ones(shape)
    for k in np.ndindex(shape):
        decay[k] = 1.0 / (1.0 + sum(kj * kj for kj in k))
    g = _cosine_series(grid, rng.standard_normal(shape) * decay)
    span = float(g.max() - g.min())
    theta = alpha * ((g - g.min()) / span if span > 0 else np.zeros(grid.shape))
    phi = _cosine_series(grid, rng.standard_normal(shape) * decay)
    return _from_angles(theta, phi, axis)


def from_file(grid: Grid, path: str) -> np.ndarray:
    try:
        snap = read_snapshot(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot read initial data from {path}: {exc}") from exc
    d = snap.data
    if d.shape != grid.shape + (3,):
        raise ConfigError(f"snapshot shape {d.shape} does not match grid {grid.shape + (3,)}")
    if np.max(np.abs(np.sum(d * d, axis=-1) - 1.0)) > 1e-9:
        raise ConfigError(f"snapshot {path} is not a unit director field")
    return d


def initial_data(preset: str, grid: Grid, seed: int = 0, axis: Sequence[float] = (0.0, 0.0, 1.0),
                 cone_angle_deg: float = 60.0, modes: int = 1,
                 path: Optional[str] = None) -> Tuple[np.ndarray, float]:
    """Return (d0, eps0) with eps0 = min d0.axis > 0."""
    try:
        axis = normalized(axis)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if preset == "constant":
        d0 = np.broadcast_to(axis, grid.shape + (3,)).copy()
    elif preset == "tilted-cone":
        d0 = tilted_cone(grid, axis, cone_angle_deg, modes)
    elif preset == "random-smooth":
        d0 = random_smooth(grid, axis, cone_angle_deg, modes, seed)
    elif preset == "file":
        if not path:
            raise ConfigError("preset 'file' needs initial_data.path")
        d0 = from_file(grid, path)
    else:
        raise ConfigError(f"unknown initial data preset '{preset}', expected one of {PRESETS}")
    eps0 = float(np.min(d0 @ axis))
    if eps0 <= 0.0:
        raise ConfigError(f"initial data violates the hemisphere condition: min d0.axis = {eps0}")
    return d0, eps0

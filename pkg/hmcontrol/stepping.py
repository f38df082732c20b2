# stepping.py
"""
Semi-implicit time steppers: implicit in the Neumann Laplacian, explicit in
everything else.

    director     d* = M^-1 (d + dt (|grad d|^2 d + (H.d) H - (H.d)^2 d)), then |d| := 1
    chart        v' = M^-1 (v + dt (gamma(v, grad v) v + chi f))
    linearized   y' = M^-1 (y + dt (a y + chi u))
    adjoint      p' = (I + dt a^T) M^-T p

with M = I - dt L. The adjoint is the exact transpose of the forward map, so
sum(step(y) * p) == sum(y * step_adjoint(p)) to round-off.
"""

from typing import Optional, Tuple

import numpy as np

from .errors import ChartBlowupError, DomainError, StabilityError
from .geometry import CHART_CAP, chart_h
from .grid import Grid, grad_sq, gradient, masked, stability_bound

NORM_TOL = 1e-9
DRIFT_LIMIT = 0.1


def _check_dt(dt: float, lam_max: float) -> None:
    if dt <= 0:
        raise DomainError(f"dt must be positive, got {dt}")
    bound = stability_bound(lam_max)
    if dt > bound * (1.0 + 1e-12):
        raise StabilityError(f"dt={dt} exceeds stability bound {bound:.3e} for field amplitude {lam_max:.3e}")


# -------------------------------------------------------------------
# Director system
# -------------------------------------------------------------------
def director_rhs(grid: Grid, d: np.ndarray, H: Optional[np.ndarray]) -> np.ndarray:
    """Explicit part |grad d|^2 d + (H.d) H - (H.d)^2 d."""
    rhs = grad_sq(grid, d)[..., None] * d
    if H is not None:
        hd = np.sum(H * d, axis=-1)[..., None]
        rhs = rhs + hd * H - hd * hd * d
    return rhs


def step_director_with_drift(grid: Grid, d: np.ndarray, H: Optional[np.ndarray], dt: float,
                             norm_tol: float = NORM_TOL) -> Tuple[np.ndarray, float]:
    """One renormalized step; also returns the pre-projection drift max ||d*|^2 - 1|."""
    d = np.asarray(d, dtype=float)
    dev = float(np.max(np.abs(np.sum(d * d, axis=-1) - 1.0)))
    if dev > norm_tol:
        raise DomainError(f"director is not unit length: max ||d|^2 - 1| = {dev:.3e}")
    lam_max = float(np.max(np.linalg.norm(H, axis=-1))) if H is not None else 0.0
    _check_dt(dt, lam_max)

    star = grid.solve_implicit(d + dt * director_rhs(grid, d, H), dt)
    norms = np.linalg.norm(star, axis=-1)
    drift = float(np.max(np.abs(norms * norms - 1.0)))
    if drift > DRIFT_LIMIT or not np.all(np.isfinite(star)):
        raise StabilityError(f"pre-projection drift {drift:.3e} exceeds {DRIFT_LIMIT}")
    return star / norms[..., None], drift


def step_director(grid: Grid, d: np.ndarray, H: Optional[np.ndarray], dt: float,
                  norm_tol: float = NORM_TOL) -> np.ndarray:
    return step_director_with_drift(grid, d, H, dt, norm_tol)[0]


# -------------------------------------------------------------------
# Chart system and its linearization
# -------------------------------------------------------------------
def gamma_from_gradients(v: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """gamma_ij = (-4 grad v_i . grad v_j + 2 |grad v|^2 delta_ij) / (1 + |v|^2); shape (..., 2, 2)."""
    inner = np.einsum("...ik,...jk->...ij", grads, grads)
    total = np.trace(inner, axis1=-2, axis2=-1)
    gamma = -4.0 * inner + 2.0 * total[..., None, None] * np.eye(2)
    return gamma / chart_h(v)[..., None, None]


def coefficient_matrix(grid: Grid, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return gamma_from_gradients(v, gradient(grid, v))


def chart_rhs(grid: Grid, v: np.ndarray) -> np.ndarray:
    """-2 grad v . grad log h + 2 |grad v|^2 v / h, evaluated as gamma(v, grad v) v."""
    return np.einsum("...ij,...j->...i", coefficient_matrix(grid, v), v)


def step_chart(grid: Grid, v: np.ndarray, f: Optional[np.ndarray], dt: float,
               cap: float = CHART_CAP) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    _check_dt(dt, 0.0)
    rhs = v + dt * chart_rhs(grid, v)
    if f is not None:
        rhs = rhs + dt * masked(grid, f)
    out = grid.solve_implicit(rhs, dt)
    vmax = float(np.max(np.linalg.norm(out, axis=-1)))
    if not np.isfinite(vmax) or vmax > cap:
        raise ChartBlowupError(f"chart magnitude {vmax:.3e} above cap {cap:.1e}")
    return out


def step_linearized(grid: Grid, y: np.ndarray, a: np.ndarray, u: Optional[np.ndarray], dt: float,
                    adjoint: bool = False) -> np.ndarray:
    """
    Forward mode: one step of y_t - Lap y = a y + chi u.
    Adjoint mode: the transpose of the forward map applied to y (u is ignored).
    """
    y = np.asarray(y, dtype=float)
    a = np.asarray(a, dtype=float)
    a_max = float(np.max(np.abs(a))) if a.size else 0.0
    _check_dt(dt, np.sqrt(a_max))
    if adjoint:
        w = grid.solve_implicit(y, dt, transpose=True)
        return w + dt * np.einsum("...ji,...j->...i", a, w)
    rhs = y + dt * np.einsum("...ij,...j->...i", a, y)
    if u is not None:
        rhs = rhs + dt * masked(grid, u)
    return grid.solve_implicit(rhs, dt)

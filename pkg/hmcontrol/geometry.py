# geometry.py
"""
Closed-form stereographic chart machinery and sphere rotations.

The chart Psi maps R^2 onto S^2 minus the south pole -e3, with Psi(0) = e3.
Every function here is vectorized over leading axes: a chart field of shape
(..., 2) maps to a director field of shape (..., 3).
"""

import numpy as np

from .errors import AntipodalError, DomainError, PoleError
from .logs import log_event

UNIT_TOL = 1e-12
POLE_MARGIN = 1e-6
CHART_CAP = 1e6
ANTIPODAL_TOL = 1e-9

# det(E E^T) * h^4 confirmed by brute-force determinants (exponent 4, not 8).
FRAME_DET_EXPONENT = 4

E3 = np.array([0.0, 0.0, 1.0])


# -------------------------------------------------------------------
# Value types
# -------------------------------------------------------------------
def unit_vector(components, tol: float = UNIT_TOL) -> np.ndarray:
    """Validate a 3-vector of unit length and return it as float array."""
    d = np.asarray(components, dtype=float)
    if d.shape != (3,):
        raise DomainError(f"expected 3 components, got shape {d.shape}")
    if abs(d @ d - 1.0) > tol:
        raise DomainError(f"|d|^2 = {d @ d!r} is not 1 within {tol}")
    return d


def normalized(components) -> np.ndarray:
    d = np.asarray(components, dtype=float)
    n = np.linalg.norm(d)
    if n == 0.0:
        raise DomainError("cannot normalize the zero vector")
    return d / n


def chart_h(v: np.ndarray) -> np.ndarray:
    """h = 1 + |v|^2, always >= 1."""
    v = np.asarray(v, dtype=float)
    return 1.0 + np.sum(v * v, axis=-1)


def check_chart_cap(v: np.ndarray, cap: float = CHART_CAP, warn: bool = True, **context) -> float:
    """Return sup |v|; logs a warning when it is above the cap (drift toward -e3)."""
    vmax = float(np.max(np.linalg.norm(v, axis=-1))) if np.size(v) else 0.0
    if vmax > cap and warn:
        log_event("WARNING", "Chart magnitude above cap", sup_v=vmax, cap=cap, **context)
    return vmax


# -------------------------------------------------------------------
# Chart
# -------------------------------------------------------------------
def stereo_project(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    v1, v2 = v[..., 0], v[..., 1]
    h = 1.0 + v1 * v1 + v2 * v2
    return np.stack([2.0 * v1 / h, 2.0 * v2 / h, (2.0 - h) / h], axis=-1)


def stereo_invert(d: np.ndarray, margin: float = POLE_MARGIN) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    d1, d2, d3 = d[..., 0], d[..., 1], d[..., 2]
    if np.any(d3 <= -1.0 + margin):
        raise PoleError(f"director within {margin} of -e3; outside the chart")
    # For d3 < 0 use 1 + d3 = (d1^2 + d2^2) / (1 - d3) to avoid cancellation.
    s = d1 * d1 + d2 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(d3 >= 0.0, 1.0 / (1.0 + d3), (1.0 - d3) / s)
    return np.stack([d1 * scale, d2 * scale], axis=-1)


def stereo_jacobian(v: np.ndarray) -> np.ndarray:
    """Shape (..., 3, 2); column j is dPsi/dv_j."""
    v = np.asarray(v, dtype=float)
    v1, v2 = v[..., 0], v[..., 1]
    h = 1.0 + v1 * v1 + v2 * v2
    h2 = h * h
    J = np.empty(v.shape[:-1] + (3, 2))
    J[..., 0, 0] = 2.0 / h - 4.0 * v1 * v1 / h2
    J[..., 0, 1] = -4.0 * v1 * v2 / h2
    J[..., 1, 0] = -4.0 * v1 * v2 / h2
    J[..., 1, 1] = 2.0 / h - 4.0 * v2 * v2 / h2
    J[..., 2, 0] = -4.0 * v1 / h2
    J[..., 2, 1] = -4.0 * v2 / h2
    return J


def chart_metric(v: np.ndarray) -> np.ndarray:
    """J^T J, which equals (4/h^2) I."""
    J = stereo_jacobian(v)
    return np.einsum("...ij,...ik->...jk", J, J)


def frame_matrix(v: np.ndarray):
    """
    Rows: Psi(v), dPsi/dv1, dPsi/dv2.
    Returns (E, det E); det(E E^T) = 16 / h^4.
    """
    J = stereo_jacobian(v)
    E = np.concatenate([stereo_project(v)[..., None, :], np.swapaxes(J, -1, -2)], axis=-2)
    return E, np.linalg.det(E)


# -------------------------------------------------------------------
# Rotations
# -------------------------------------------------------------------
def skew(k: np.ndarray) -> np.ndarray:
    kx, ky, kz = k
    return np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])


def rotation_between(a, b) -> np.ndarray:
    """
    Minimal-angle rotation R with R a = b, rotating in span{a, b}.

    For a.b >= 0: R = I + K + K^2 / (1 + a.b), K = [a x b]_x.
    For a.b < 0 the 1 / (1 + a.b) factor cancels badly, so the unit-axis form
    R = I + s Khat + (1 - c) Khat^2 is used, with s = |a x b| and the axis
    re-orthogonalized against a.
    """
    a = normalized(unit_vector(a, tol=1e-9))
    b = normalized(unit_vector(b, tol=1e-9))
    c = float(a @ b)
    if c <= -1.0 + ANTIPODAL_TOL:
        raise AntipodalError("a and b are antipodal; rotation axis undefined")
    axb = np.cross(a, b)
    if c >= 0.0:
        K = skew(axb)
        return np.eye(3) + K + (K @ K) / (1.0 + c)
    s = float(np.linalg.norm(axb))
    k = axb / s
    k = normalized(k - (k @ a) * a)
    r = float(np.hypot(s, c))
    s, c = s / r, c / r
    K = skew(k)
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def is_rotation(R: np.ndarray, tol: float = UNIT_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    return bool(
        R.shape == (3, 3)
        and np.max(np.abs(R.T @ R - np.eye(3))) <= tol
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def rotate_field(R: np.ndarray, field: np.ndarray) -> np.ndarray:
    """Apply a constant 3x3 matrix node-wise to a (..., 3) field."""
    return np.einsum("ij,...j->...i", R, field)


def align_rotation(a, b) -> np.ndarray:
    """Some rotation R with R a = b; a half turn when a and b are antipodal."""
    a = normalized(a)
    b = normalized(b)
    if float(a @ b) > -1.0 + ANTIPODAL_TOL:
        return rotation_between(a, b)
    helper = np.eye(3)[int(np.argmin(np.abs(a)))]
    n = normalized(np.cross(a, helper))
    return 2.0 * np.outer(n, n) - np.eye(3)

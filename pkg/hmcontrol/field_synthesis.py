# field_synthesis.py
"""
Convert a chart-space control density f (supported in the control region)
into a physical magnetic field H.

The algebraic system for H is underdetermined. We take the special branch in
which the alignment factor (2 v.H + (1 - |v|^2) H3) / h equals chi_omega; the
remaining equations are then linear, A(v) H = chi_omega (f1, f2, -h/2), with
A(v)^2 = (h/2)^2 I, so A is invertible for every v.

On this branch H.d = 1 inside omega, and f = 0 gives H = d there (not zero).
"""

from typing import Optional

import numpy as np

from .errors import DomainError
from .geometry import chart_h


def build_synthesis_matrix(v: np.ndarray) -> np.ndarray:
    """Shape (..., 3, 3); spectrum {-h/2, h/2, h/2}."""
    v = np.asarray(v, dtype=float)
    v1, v2 = v[..., 0], v[..., 1]
    A = np.empty(v.shape[:-1] + (3, 3))
    A[..., 0, 0] = 0.5 * (1.0 + v2 * v2 - v1 * v1)
    A[..., 0, 1] = -v1 * v2
    A[..., 0, 2] = -v1
    A[..., 1, 0] = -v1 * v2
    A[..., 1, 1] = 0.5 * (1.0 + v1 * v1 - v2 * v2)
    A[..., 1, 2] = -v2
    A[..., 2, 0] = -v1
    A[..., 2, 1] = -v2
    A[..., 2, 2] = 0.5 * (-1.0 + v1 * v1 + v2 * v2)
    return A


def _solve3(A: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    # adjugate / det: columns of adj(A) are cross products of the rows of A
    r0, r1, r2 = A[..., 0, :], A[..., 1, :], A[..., 2, :]
    c0 = np.cross(r1, r2)
    c1 = np.cross(r2, r0)
    c2 = np.cross(r0, r1)
    det = np.sum(r0 * c0, axis=-1)
    x = c0 * rhs[..., 0:1] + c1 * rhs[..., 1:2] + c2 * rhs[..., 2:3]
    return x / det[..., None]


def synthesize_field(v: np.ndarray, f: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """
    Node-wise H(v, f) with exact zeros off the mask.
    v, f: (..., 2); mask: boolean (...,).
    """
    v = np.asarray(v, dtype=float)
    f = np.asarray(f, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    h = chart_h(v)
    rhs = np.stack([f[..., 0], f[..., 1], -0.5 * h], axis=-1)
    H = _solve3(build_synthesis_matrix(v), rhs)
    return np.where(mask[..., None], H, 0.0)


def synthesis_lhs(v: np.ndarray, H: np.ndarray) -> np.ndarray:
    """Left side of the algebraic system: (h^2/4)(H.d) J^T H as a (..., 2) field."""
    v = np.asarray(v, dtype=float)
    H = np.asarray(H, dtype=float)
    v1, v2 = v[..., 0], v[..., 1]
    h = chart_h(v)
    align = (2.0 * v1 * H[..., 0] + 2.0 * v2 * H[..., 1] + (2.0 - h) * H[..., 2]) / h
    A = build_synthesis_matrix(v)
    tangential = np.einsum("...ij,...j->...i", A[..., :2, :], H)
    return align[..., None] * tangential


def synthesis_residual(v: np.ndarray, f: np.ndarray, H: np.ndarray,
                       mask: Optional[np.ndarray] = None) -> float:
    f = np.asarray(f, dtype=float)
    if mask is not None:
        f = np.where(np.asarray(mask, dtype=bool)[..., None], f, 0.0)
    r = synthesis_lhs(v, H) - f
    if r.size == 0:
        return 0.0
    return float(np.max(np.linalg.norm(r, axis=-1)))


def uniform_field(shape, lam: float, axis) -> np.ndarray:
    """H(x) = lam * axis at every node of a grid with the given node shape."""
    if lam < 0:
        raise DomainError(f"field amplitude must be non-negative, got {lam}")
    axis = np.asarray(axis, dtype=float)
    return np.broadcast_to(lam * axis, tuple(shape) + (3,)).copy()

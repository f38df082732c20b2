# grid.py
"""
Rectangular node grid on [0, Lx] or [0, Lx] x [0, Ly] with homogeneous
Neumann boundary handled by ghost-node reflection.

Fields are numpy arrays of shape grid.shape + (k,), row-major node order.
The sparse Laplacian is assembled per axis and combined with Kronecker
products; the implicit operator I - dt*L is factorized once per dt.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import splu

from .errors import GridError

DEFAULT_OMEGA_FRACTION = 0.25


def laplacian_matrix_neumann_1d(n: int, h: float) -> sps.csr_matrix:
    """Second-order centered stencil; mirrored ghost nodes double the boundary off-diagonals."""
    a = 1.0 / (h * h)
    main = -2.0 * a * np.ones(n)
    off = a * np.ones(n - 1)
    L = sps.diags([off, main, off], offsets=[-1, 0, 1], shape=(n, n), format="lil")
    L[0, 1] = 2.0 * a
    L[n - 1, n - 2] = 2.0 * a
    return L.tocsr()


class ImplicitOperator:
    """Sparse LU of M = I - dt*L; solves with M and with M^T."""

    def __init__(self, L: sps.csr_matrix, dt: float):
        self.dt = dt
        M = sps.identity(L.shape[0], format="csc") - dt * L.tocsc()
        self._lu = splu(M.tocsc())

    def solve(self, rhs: np.ndarray, transpose: bool = False) -> np.ndarray:
        return self._lu.solve(np.ascontiguousarray(rhs, dtype=float), trans="T" if transpose else "N")


@dataclass(frozen=True)
class Grid:
    dim: int
    extents: Tuple[float, ...]
    counts: Tuple[int, ...]
    mask: np.ndarray = field(repr=False, compare=False)
    _operators: Dict[float, ImplicitOperator] = field(default_factory=dict, repr=False, compare=False)

    # ---------------------------------------------------------------
    # Construction
    # ---------------------------------------------------------------
    @classmethod
    def build(cls, extents: Sequence[float], counts: Sequence[int],
              omega_fraction: Optional[Sequence[float]] = None,
              omega_center: Optional[Sequence[float]] = None) -> "Grid":
        extents = tuple(float(L) for L in extents)
        counts = tuple(int(n) for n in counts)
        dim = len(counts)
        if dim not in (1, 2) or len(extents) != dim:
            raise GridError(f"grid must be 1D or 2D with matching extents, got {extents} / {counts}")
        if any(n < 3 for n in counts):
            raise GridError(f"need at least 3 nodes per axis, got {counts}")
        if any(L <= 0 for L in extents):
            raise GridError(f"extents must be positive, got {extents}")
        fraction = tuple(omega_fraction) if omega_fraction is not None else (DEFAULT_OMEGA_FRACTION,) * dim
        center = tuple(omega_center) if omega_center is not None else (0.5,) * dim
        if len(fraction) != dim or len(center) != dim:
            raise GridError("omega fraction/center must have one entry per axis")

        axes = [np.linspace(0.0, L, n) for L, n in zip(extents, counts)]
        inside = np.ones(counts, dtype=bool)
        for k, (x, L, fr, c) in enumerate(zip(axes, extents, fraction, center)):
            half = 0.5 * fr * L
            sel = np.abs(x - c * L) <= half * (1.0 + 1e-12)
            inside &= sel.reshape([-1 if j == k else 1 for j in range(dim)])
        grid = cls(dim=dim, extents=extents, counts=counts, mask=inside)
        grid._check_mask()
        return grid

    def _check_mask(self) -> None:
        interior = np.zeros(self.counts, dtype=bool)
        interior[tuple(slice(1, -1) for _ in range(self.dim))] = True
        if not self.mask.any():
            raise GridError("control region contains no nodes")
        if np.any(self.mask & ~interior):
            raise GridError("control region touches the boundary")
        if np.array_equal(self.mask, interior):
            raise GridError("control region must be a strict subset of the interior")

    # ---------------------------------------------------------------
    # Geometry
    # ---------------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.counts

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.counts))

    @cached_property
    def spacing(self) -> Tuple[float, ...]:
        return tuple(L / (n - 1) for L, n in zip(self.extents, self.counts))

    @cached_property
    def axes(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.linspace(0.0, L, n) for L, n in zip(self.extents, self.counts))

    @cached_property
    def coords(self) -> Tuple[np.ndarray, ...]:
        """Node coordinates, one array of grid.shape per axis."""
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid node weights; they sum to |Omega|."""
        w1 = []
        for h, n in zip(self.spacing, self.counts):
            w = np.full(n, h)
            w[0] = w[-1] = 0.5 * h
            w1.append(w)
        if self.dim == 1:
            return w1[0]
        return np.outer(w1[0], w1[1])

    # ---------------------------------------------------------------
    # Operators
    # ---------------------------------------------------------------
    @cached_property
    def laplacian(self) -> sps.csr_matrix:
        mats = [laplacian_matrix_neumann_1d(n, h) for n, h in zip(self.counts, self.spacing)]
        if self.dim == 1:
            return mats[0]
        Ix = sps.identity(self.counts[0], format="csr")
        Iy = sps.identity(self.counts[1], format="csr")
        return (sps.kron(mats[0], Iy) + sps.kron(Ix, mats[1])).tocsr()

    def implicit_operator(self, dt: float) -> ImplicitOperator:
        key = float(dt)
        if key not in self._operators:
            self._operators[key] = ImplicitOperator(self.laplacian, key)
        return self._operators[key]

    def flat(self, field: np.ndarray) -> np.ndarray:
        """Node-major (N, k) view of a field (scalar fields become (N,))."""
        field = np.asarray(field, dtype=float)
        if field.shape == self.counts:
            return field.reshape(self.n_nodes)
        return field.reshape((self.n_nodes,) + field.shape[self.dim:])

    def unflat(self, data: np.ndarray) -> np.ndarray:
        return data.reshape(self.counts + data.shape[1:])

    def solve_implicit(self, rhs: np.ndarray, dt: float, transpose: bool = False) -> np.ndarray:
        op = self.implicit_operator(dt)
        return self.unflat(op.solve(self.flat(rhs), transpose=transpose))


# -------------------------------------------------------------------
# Field utilities
# -------------------------------------------------------------------
def neumann_laplacian(grid: Grid, field: np.ndarray) -> np.ndarray:
    return grid.unflat(grid.laplacian @ grid.flat(field))


def gradient(grid: Grid, field: np.ndarray) -> np.ndarray:
    """
    Centered differences with reflected ghost nodes (zero normal derivative on
    the boundary). Returns shape field.shape + (dim,).
    """
    field = np.asarray(field, dtype=float)
    parts = []
    for axis, h in enumerate(grid.spacing):
        g = np.zeros_like(field)
        lo = [slice(None)] * field.ndim
        hi = [slice(None)] * field.ndim
        mid = [slice(None)] * field.ndim
        lo[axis], hi[axis], mid[axis] = slice(None, -2), slice(2, None), slice(1, -1)
        g[tuple(mid)] = (field[tuple(hi)] - field[tuple(lo)]) / (2.0 * h)
        parts.append(g)
    return np.stack(parts, axis=-1)


def grad_sq(grid: Grid, field: np.ndarray) -> np.ndarray:
    """|grad u|^2 summed over components, shape grid.shape."""
    g = gradient(grid, field)
    return np.sum(g * g, axis=tuple(range(grid.dim, g.ndim)))


def edge_dirichlet_energy(grid: Grid, field: np.ndarray) -> float:
    """1/2 integral |grad u|^2 with forward differences at edge midpoints."""
    field = np.asarray(field, dtype=float)
    total = 0.0
    for axis, h in enumerate(grid.spacing):
        diff = np.diff(field, axis=axis) / h
        sq = np.sum(diff * diff, axis=tuple(range(grid.dim, diff.ndim)))
        if grid.dim == 1:
            total += float(np.sum(sq)) * h
        else:
            other = 1 - axis
            w = np.full(grid.counts[other], grid.spacing[other])
            w[0] = w[-1] = 0.5 * grid.spacing[other]
            w = w.reshape((1, -1) if axis == 0 else (-1, 1))
            total += float(np.sum(sq * w)) * h
    return 0.5 * total


def integrate(grid: Grid, scalar: np.ndarray) -> float:
    return float(np.sum(grid.weights * scalar))


def l2_norm(grid: Grid, field: np.ndarray) -> float:
    field = np.asarray(field, dtype=float)
    sq = field * field
    if field.ndim > grid.dim:
        sq = np.sum(sq, axis=tuple(range(grid.dim, field.ndim)))
    return float(np.sqrt(integrate(grid, sq)))


def sup_norm(field: np.ndarray, components: bool = True) -> float:
    field = np.asarray(field, dtype=float)
    if field.size == 0:
        return 0.0
    if components and field.ndim >= 1:
        return float(np.max(np.linalg.norm(field, axis=-1)))
    return float(np.max(np.abs(field)))


def w1inf_norm(grid: Grid, field: np.ndarray) -> float:
    """sup |u| + sup |grad u| (Frobenius over components and directions)."""
    field = np.asarray(field, dtype=float)
    if field.size == 0:
        return 0.0
    return sup_norm(field, components=field.ndim > grid.dim) + float(np.sqrt(np.max(grad_sq(grid, field))))


def masked(grid: Grid, field: np.ndarray) -> np.ndarray:
    """chi_omega * field with exact zeros off the control region."""
    field = np.asarray(field, dtype=float)
    m = grid.mask.reshape(grid.counts + (1,) * (field.ndim - grid.dim))
    return np.where(m, field, 0.0)


def stability_bound(lam_max: float) -> float:
    """dt <= 0.25 * min(1, 1/(1 + lam^2)); lam^2 is the stiffest explicit term."""
    return 0.25 * min(1.0, 1.0 / (1.0 + lam_max * lam_max))

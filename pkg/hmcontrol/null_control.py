# null_control.py
"""
Internal null control of the chart system.

Linear layer: penalized HUM for y_t - Lap y = a(x, t) y + chi_omega u, solved
by conjugate gradient on the normal equations

    (I + (1/eps) G* G) u = -(1/eps) G* y_free

in the control inner product <u, w>_U = sum_n dt sum_x w_x u^n(x).w^n(x).
G maps a control to the terminal state it produces from y0 = 0, and G* is
evaluated with the exact discrete adjoint, so the gradient is exact.

Nonlinear layer: Picard iteration. Freeze the chart trajectory z, assemble
a = gamma(z, grad z), solve the linear problem from v0, replace z by the
controlled linear trajectory, repeat.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import DomainError, NoConvergence, StabilityError
from .grid import Grid, l2_norm, masked
from .logs import log_event
from .stepping import coefficient_matrix, step_chart, step_linearized

DEFAULT_PENALTY = 1e-8
DEFAULT_HUM_TOL = 1e-10
DEFAULT_HUM_MAXIT = 3000
DEFAULT_TERMINAL_RATIO = 1e-2


# -------------------------------------------------------------------
# Results
# -------------------------------------------------------------------
@dataclass
class HumResult:
    u: np.ndarray                 # (N, *grid.shape, 2), zero off omega
    trajectory: np.ndarray        # (N + 1, *grid.shape, 2)
    initial_norm: float
    terminal_norm: float
    cost: float
    max_control: float
    iterations: int
    converged: bool
    residuals: List[float] = field(default_factory=list)

    @property
    def ratio(self) -> float:
        return self.terminal_norm / self.initial_norm if self.initial_norm > 0 else 0.0


@dataclass
class PicardResult:
    f: np.ndarray                 # (N, *grid.shape, 2)
    v: np.ndarray                 # (N + 1, *grid.shape, 2)
    iterations: int
    terminal_norm: float
    change: float
    converged: bool
    history: List[dict] = field(default_factory=list)


# -------------------------------------------------------------------
# Linearized control problem
# -------------------------------------------------------------------
class LinearControlProblem:
    """Discrete forward/adjoint pair for one coefficient trajectory a^0..a^{N-1}."""

    def __init__(self, grid: Grid, a: np.ndarray, T: float, nsteps: Optional[int] = None):
        if T <= 0:
            raise DomainError(f"horizon must be positive, got {T}")
        a = np.asarray(a, dtype=float)
        slab_shape = grid.shape + (2, 2)
        if a.shape == slab_shape:
            if nsteps is None:
                raise DomainError("nsteps is required when a single coefficient slab is given")
            a = np.broadcast_to(a, (nsteps,) + slab_shape)
        elif a.shape[1:] != slab_shape:
            raise DomainError(f"coefficient shape {a.shape} does not match grid {grid.shape}")
        self.grid = grid
        self.a = a
        self.nsteps = a.shape[0]
        self.T = T
        self.dt = T / self.nsteps
        self.control_shape = (self.nsteps,) + grid.shape + (2,)

    # ---------------------------------------------------------------
    def solve_state(self, y0: np.ndarray, u: Optional[np.ndarray]) -> np.ndarray:
        y = np.asarray(y0, dtype=float)
        traj = [y]
        for n in range(self.nsteps):
            y = step_linearized(self.grid, y, self.a[n], None if u is None else u[n], self.dt)
            traj.append(y)
        return np.stack(traj)

    def adjoint_source(self, z: np.ndarray) -> np.ndarray:
        """G* z in the U inner product: c^n = W^-1 chi M^-T q^{n+1}, q^N = W z, q^n = Phi_n^T q^{n+1}."""
        grid = self.grid
        w = grid.weights[..., None]
        q = w * z
        c = np.zeros(self.control_shape)
        for n in range(self.nsteps - 1, -1, -1):
            r = grid.solve_implicit(q, self.dt, transpose=True)
            c[n] = masked(grid, r) / w
            q = r + self.dt * np.einsum("...ji,...j->...i", self.a[n], r)
        return c

    def inner(self, u: np.ndarray, w: np.ndarray) -> float:
        return float(self.dt * np.sum(self.grid.weights[..., None] * u * w))

    def terminal_map(self, u: np.ndarray) -> np.ndarray:
        """G u: terminal state from zero initial data."""
        return self.solve_state(np.zeros(self.grid.shape + (2,)), u)[-1]

    def functional(self, u: np.ndarray, y0: np.ndarray, penalty: float) -> float:
        u = masked_control(self.grid, u)
        yT = self.solve_state(y0, u)[-1]
        return 0.5 * self.inner(u, u) + 0.5 / penalty * l2_norm(self.grid, yT) ** 2

    def gradient(self, u: np.ndarray, y0: np.ndarray, penalty: float) -> np.ndarray:
        """Riesz representative of dJ in the U inner product."""
        u = masked_control(self.grid, u)
        yT = self.solve_state(y0, u)[-1]
        return u + self.adjoint_source(yT) / penalty


def masked_control(grid: Grid, u: np.ndarray) -> np.ndarray:
    m = grid.mask[None, ..., None]
    return np.where(m, u, 0.0)


# -------------------------------------------------------------------
# HUM by conjugate gradient
# -------------------------------------------------------------------
def hum_null_control(grid: Grid, a: np.ndarray, y0: np.ndarray, T: float,
                     penalty: float = DEFAULT_PENALTY, tol: float = DEFAULT_HUM_TOL,
                     maxit: int = DEFAULT_HUM_MAXIT, nsteps: Optional[int] = None) -> HumResult:
    """
    Minimize 1/2 |u|_U^2 + 1/(2 penalty) |y(T)|^2. Raises NoConvergence (with the
    partial result attached) when maxit is reached.
    """
    if penalty <= 0:
        raise DomainError(f"penalty must be positive, got {penalty}")
    problem = LinearControlProblem(grid, a, T, nsteps)
    y0 = np.asarray(y0, dtype=float)
    y0_norm = l2_norm(grid, y0)
    u = np.zeros(problem.control_shape)

    free = problem.solve_state(y0, None)
    b = -problem.adjoint_source(free[-1]) / penalty
    b_norm = np.sqrt(problem.inner(b, b))
    residuals: List[float] = []
    iterations = 0
    converged = b_norm == 0.0

    if not converged:
        r = b.copy()
        p = r.copy()
        rr = problem.inner(r, r)
        while iterations < maxit:
            Qp = p + problem.adjoint_source(problem.terminal_map(p)) / penalty
            alpha = rr / problem.inner(p, Qp)
            u = u + alpha * p
            r = r - alpha * Qp
            rr_new = problem.inner(r, r)
            iterations += 1
            residuals.append(float(np.sqrt(rr_new) / b_norm))
            if residuals[-1] <= tol:
                converged = True
                break
            p = r + (rr_new / rr) * p
            rr = rr_new

    trajectory = problem.solve_state(y0, u)
    result = HumResult(
        u=u,
        trajectory=trajectory,
        initial_norm=y0_norm,
        terminal_norm=l2_norm(grid, trajectory[-1]),
        cost=float(np.sqrt(problem.inner(u, u))),
        max_control=float(np.max(np.linalg.norm(u, axis=-1))) if u.size else 0.0,
        iterations=iterations,
        converged=converged,
        residuals=residuals,
    )
    if not converged:
        log_event("WARNING", "HUM did not converge", iterations=iterations,
                  residual=residuals[-1] if residuals else None, terminal_norm=result.terminal_norm)
        raise NoConvergence(f"HUM reached maxit={maxit} with relative residual {residuals[-1]:.3e}",
                            terminal_norm=result.terminal_norm, iterations=iterations, result=result)
    return result


def penalty_sweep(grid: Grid, a: np.ndarray, y0: np.ndarray, T: float, penalties: Sequence[float],
                  tol: float = DEFAULT_HUM_TOL, maxit: int = DEFAULT_HUM_MAXIT,
                  nsteps: Optional[int] = None, workers: int = 1) -> pd.DataFrame:
    """Independent HUM solves, one row per penalty (sorted from largest to smallest)."""

    def solve(penalty: float) -> dict:
        try:
            res = hum_null_control(grid, a, y0, T, penalty, tol, maxit, nsteps)
        except NoConvergence as exc:
            res = exc.result
        return {
            "penalty": penalty,
            "terminal_norm": res.terminal_norm,
            "ratio": res.ratio,
            "cost": res.cost,
            "max_control": res.max_control,
            "iterations": res.iterations,
            "converged": res.converged,
        }

    ordered = sorted(penalties, reverse=True)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(solve, ordered))
    else:
        rows = [solve(p) for p in ordered]
    return pd.DataFrame(rows)


# -------------------------------------------------------------------
# Picard outer loop
# -------------------------------------------------------------------
def chart_coefficients(grid: Grid, z: np.ndarray) -> np.ndarray:
    """gamma(z^n, grad z^n) for every slab start n = 0..N-1."""
    return np.stack([coefficient_matrix(grid, z[n]) for n in range(z.shape[0] - 1)])


def simulate_chart(grid: Grid, v0: np.ndarray, f: np.ndarray, T: float) -> np.ndarray:
    """Nonlinear chart trajectory driven by the control slabs f^0..f^{N-1}."""
    nsteps = f.shape[0]
    dt = T / nsteps
    v = np.asarray(v0, dtype=float)
    traj = [v]
    for n in range(nsteps):
        v = step_chart(grid, v, f[n], dt)
        traj.append(v)
    return np.stack(traj)


def picard_null_control(grid: Grid, v0: np.ndarray, T: float, nsteps: int,
                        outer_tol: float = 1e-8, outer_maxit: int = 10,
                        penalty: float = DEFAULT_PENALTY, hum_tol: float = DEFAULT_HUM_TOL,
                        hum_maxit: int = DEFAULT_HUM_MAXIT,
                        terminal_ratio: float = DEFAULT_TERMINAL_RATIO) -> PicardResult:
    v0 = np.asarray(v0, dtype=float)
    if nsteps < 1:
        raise DomainError(f"nsteps must be at least 1, got {nsteps}")
    v0_norm = l2_norm(grid, v0)
    if v0_norm == 0.0:
        zeros = np.zeros((nsteps,) + v0.shape)
        return PicardResult(f=zeros, v=np.zeros((nsteps + 1,) + v0.shape), iterations=0,
                            terminal_norm=0.0, change=0.0, converged=True)

    target = max(outer_tol, terminal_ratio * v0_norm)
    z = np.broadcast_to(v0, (nsteps + 1,) + v0.shape).copy()
    f = np.zeros((nsteps,) + v0.shape)
    history: List[dict] = []
    change = terminal = float("inf")

    for k in range(1, outer_maxit + 1):
        a = chart_coefficients(grid, z)
        try:
            hum = hum_null_control(grid, a, v0, T, penalty, hum_tol, hum_maxit)
        except NoConvergence as exc:
            hum = exc.result
        except StabilityError as exc:
            raise NoConvergence(f"linearized system unstable at Picard iteration {k}: {exc}",
                                terminal_norm=terminal, iterations=k - 1) from exc
        f = hum.u
        change = float(np.max(np.abs(hum.trajectory - z)))
        terminal = hum.terminal_norm
        z = hum.trajectory
        history.append({"iteration": k, "change": change, "terminal_norm": terminal,
                        "hum_iterations": hum.iterations, "cost": hum.cost})
        log_event("DEBUG", "Picard iteration", **history[-1])
        if change <= outer_tol and terminal <= target:
            return PicardResult(f=f, v=z, iterations=k, terminal_norm=terminal, change=change,
                                converged=True, history=history)

    partial = PicardResult(f=f, v=z, iterations=outer_maxit, terminal_norm=terminal, change=change,
                           converged=False, history=history)
    log_event("WARNING", "Picard iteration did not converge", terminal_norm=terminal, change=change,
              initial_norm=v0_norm)
    raise NoConvergence(f"Picard did not converge in {outer_maxit} iterations "
                        f"(change={change:.3e}, terminal={terminal:.3e})",
                        terminal_norm=terminal, iterations=outer_maxit, result=partial)

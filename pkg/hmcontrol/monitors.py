# monitors.py
"""
Runtime checks of the a-priori estimates along a director trajectory.

Standalone functions evaluate one estimate on stored snapshots. StageMonitor
streams the same checks step by step during a run, records one report row per
accepted step, and raises MonitorViolation as soon as a bound fails beyond
grid_slack (relative) plus noise_floor (absolute).

Monitors only read the fields they are given.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import DomainError, MonitorViolation
from .grid import Grid, edge_dirichlet_energy, grad_sq, integrate
from .logs import log_event
from .stage_control import Schedule

DEFAULT_GRID_SLACK = 0.05
DEFAULT_NOISE_FLOOR = 1e-9
DEFAULT_NORM_TOL = 1e-9
ENERGY_STEP_TOL = 1e-10
CONSTANT_FIELD_STAGES = (0, 2, 4)

# frozen column order of the trajectory CSV
REPORT_COLUMNS = [
    "time", "leg", "stage", "lambda", "norm_dev", "drift", "margin",
    "sup_grad", "sup_dt", "energy", "sup_chart", "bernstein",
]


# -------------------------------------------------------------------
# Pointwise quantities
# -------------------------------------------------------------------
def hemisphere_margin(d: np.ndarray, e) -> float:
    return float(np.min(np.asarray(d, dtype=float) @ np.asarray(e, dtype=float)))


def norm_deviation(d: np.ndarray) -> float:
    d = np.asarray(d, dtype=float)
    return float(np.max(np.abs(np.sum(d * d, axis=-1) - 1.0)))


def sup_gradient(grid: Grid, d: np.ndarray) -> float:
    return float(np.sqrt(np.max(grad_sq(grid, d))))


def sup_time_derivative(d: np.ndarray, d_prev: np.ndarray, dt: float) -> float:
    """Backward difference sup |(d^n - d^{n-1}) / dt|."""
    diff = (np.asarray(d, dtype=float) - np.asarray(d_prev, dtype=float)) / dt
    return float(np.max(np.linalg.norm(diff, axis=-1)))


def energy(grid: Grid, d: np.ndarray, H: Optional[np.ndarray] = None) -> float:
    """1/2 int |grad d|^2 - (H.d)^2; gradient part on edge midpoints, field part on nodes."""
    total = edge_dirichlet_energy(grid, d)
    if H is not None:
        hd = np.sum(np.asarray(H, dtype=float) * d, axis=-1)
        total -= 0.5 * integrate(grid, hd * hd)
    return total


def bernstein_quotient(grid: Grid, d: np.ndarray, e, eps0: float) -> float:
    """max_x (|grad d|^2 / 2) / (d.e - eps0/2)^2."""
    if eps0 <= 0:
        raise DomainError(f"eps0 must be positive, got {eps0}")
    f = np.asarray(d, dtype=float) @ np.asarray(e, dtype=float) - 0.5 * eps0
    if np.any(f <= 0):
        return math.inf
    return float(np.max(0.5 * grad_sq(grid, d) / (f * f)))


def _ratio(num: float, den: float, noise_floor: float) -> float:
    # 0/0 reads as 0; anything under the floor counts as zero
    if num <= noise_floor:
        return 0.0
    if den <= 0.0:
        return math.inf
    return num / den


# -------------------------------------------------------------------
# Trajectory checks
# -------------------------------------------------------------------
def gradient_bound_ratio(grid: Grid, traj: Sequence[np.ndarray], d0: np.ndarray, eps0: float,
                         noise_floor: float = 0.0) -> float:
    if eps0 <= 0:
        raise DomainError(f"eps0 must be positive, got {eps0}")
    bound = (2.0 / eps0) * sup_gradient(grid, d0)
    worst = max(sup_gradient(grid, d) for d in traj)
    return _ratio(worst, bound, noise_floor)


def gradient_peak(report: "TrajectoryReport") -> Tuple[float, float]:
    """(max sup_grad, time of the max) over the rows after the initial one."""
    frame = report.to_frame().iloc[1:]
    if frame.empty:
        raise DomainError("report has no rows after the initial snapshot")
    k = int(np.argmax(frame["sup_grad"].to_numpy()))
    return float(frame["sup_grad"].iloc[k]), float(frame["time"].iloc[k])


def report_gradient_ratio(report: "TrajectoryReport", grid: Grid, d0: np.ndarray, eps0: float,
                          noise_floor: float = 0.0) -> float:
    """
    gradient_bound_ratio from the sup_grad column of a streamed report. The
    initial row is left out: at t = 0 the ratio is eps0 / 2 by construction.
    """
    if eps0 <= 0:
        raise DomainError(f"eps0 must be positive, got {eps0}")
    worst, _ = gradient_peak(report)
    return _ratio(worst, (2.0 / eps0) * sup_gradient(grid, d0), noise_floor)


def bound_excess(ratio: float) -> float:
    """How far a measured/bound ratio overshoots 1; 0 when the bound holds."""
    return max(ratio - 1.0, 0.0)


def time_derivative_monotone(traj: Sequence[np.ndarray], times: Sequence[float], t1: float, e,
                             noise_floor: float = 0.0) -> float:
    """
    max_{t >= t1} sup|d_t(t)| / (sup|d_t(t1)| / eps1), eps1 = margin at t1.
    d_t is the backward difference, so t1 must be preceded by a snapshot.
    """
    times = np.asarray(times, dtype=float)
    idx = int(np.searchsorted(times, t1 - 1e-12))
    if idx < 1 or idx >= len(times):
        raise DomainError(f"t1={t1} needs a snapshot before it and must lie within the trajectory")
    eps1 = hemisphere_margin(traj[idx], e)
    if eps1 <= 0:
        raise DomainError(f"hemisphere margin at t1 is {eps1}, not positive")
    rates = [sup_time_derivative(traj[n], traj[n - 1], times[n] - times[n - 1])
             for n in range(idx, len(times))]
    return _ratio(max(rates), rates[0] / eps1, noise_floor)


def decay_check(report: "TrajectoryReport", schedule: Schedule) -> Tuple[float, float]:
    """(1 - margin at 3T0, exp(-Lambda^2 margin(2T0) T0))."""
    frame = report.to_frame()
    t = frame["time"].to_numpy()
    T0 = schedule.T0

    def margin_at(target: float) -> float:
        k = int(np.argmin(np.abs(t - target)))
        if abs(t[k] - target) > 1e-9 * max(1.0, target):
            raise DomainError(f"trajectory has no snapshot at t={target}")
        return float(frame["margin"].iloc[k])

    measured = 1.0 - margin_at(3.0 * T0)
    bound = math.exp(-schedule.Lambda ** 2 * margin_at(2.0 * T0) * T0)
    return measured, bound


# -------------------------------------------------------------------
# Streaming monitor
# -------------------------------------------------------------------
@dataclass
class TrajectoryReport:
    rows: List[Dict[str, float]] = field(default_factory=list)
    checks: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def record_check(self, name: str, measured: float, bound: float) -> None:
        """Keep the worst measured/bound pair per check."""
        slack = bound - measured
        prev = self.checks.get(name)
        if prev is None or slack < prev["slack"]:
            self.checks[name] = {"measured": measured, "bound": bound, "slack": slack,
                                 "passed": bool(measured <= bound)}

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=REPORT_COLUMNS)

    def summary(self) -> pd.DataFrame:
        rows = [{"monitor": k, **v} for k, v in sorted(self.checks.items())]
        return pd.DataFrame(rows, columns=["monitor", "measured", "bound", "slack", "passed"])


class StageMonitor:
    """
    Checks for one leg driven by a field along e: unit norm always; hemisphere,
    gradient, time derivative and energy on the field stages 0-4. The last
    two only within constant-field stages.
    """

    def __init__(self, grid: Grid, d0: np.ndarray, e, eps0: Optional[float] = None,
                 leg: int = 0, Lambda: float = 0.0, report: Optional[TrajectoryReport] = None,
                 grid_slack: float = DEFAULT_GRID_SLACK, noise_floor: float = DEFAULT_NOISE_FLOOR,
                 norm_tol: float = DEFAULT_NORM_TOL):
        self.grid = grid
        self.e = np.asarray(e, dtype=float)
        self.eps0 = hemisphere_margin(d0, self.e) if eps0 is None else eps0
        if self.eps0 <= 0:
            raise DomainError(f"initial data violates the hemisphere condition: margin {self.eps0}")
        self.leg = leg
        self.Lambda = Lambda
        self.report = report if report is not None else TrajectoryReport()
        self.grid_slack = grid_slack
        self.noise_floor = noise_floor
        self.norm_tol = norm_tol
        self.grad_bound = (2.0 / self.eps0) * sup_gradient(grid, d0)
        self._stage_ref: Dict[int, Tuple[float, float]] = {}
        self._last_energy: Optional[Tuple[int, float]] = None

    def _check(self, name: str, measured: float, bound: float, t: float) -> None:
        self.report.record_check(name, measured, bound)
        if not measured <= bound:
            log_event("ERROR", "Monitor violation", monitor=name, measured=measured, bound=bound,
                      time=t, leg=self.leg)
            raise MonitorViolation(name, measured, bound, t)

    def _sup_bound(self, bound: float) -> float:
        return (1.0 + self.grid_slack) * bound + self.noise_floor

    def observe(self, t: float, stage: int, lam: float, d: np.ndarray, H: Optional[np.ndarray],
                drift: float = 0.0, d_prev: Optional[np.ndarray] = None, dt: Optional[float] = None,
                sup_chart: float = float("nan")) -> Dict[str, float]:
        grid = self.grid
        row = {
            "time": t,
            "leg": self.leg,
            "stage": stage,
            "lambda": lam,
            "norm_dev": norm_deviation(d),
            "drift": drift,
            "margin": hemisphere_margin(d, self.e),
            "sup_grad": sup_gradient(grid, d),
            "sup_dt": sup_time_derivative(d, d_prev, dt) if d_prev is not None and dt else float("nan"),
            "energy": energy(grid, d, H),
            "sup_chart": sup_chart,
            "bernstein": bernstein_quotient(grid, d, self.e, self.eps0),
        }
        self.report.rows.append(row)

        self._check("norm", row["norm_dev"], self.norm_tol, t)
        if stage >= 5:
            return row

        self._check("hemisphere", self.eps0 - row["margin"], self.grid_slack, t)
        self._check("gradient", row["sup_grad"], self._sup_bound(self.grad_bound), t)

        if stage in CONSTANT_FIELD_STAGES and d_prev is not None and dt:
            ref = self._stage_ref.get(stage)
            if ref is None:
                self._stage_ref[stage] = (row["sup_dt"], max(row["margin"], 1e-300))
            else:
                rate0, eps1 = ref
                self._check("time_derivative", row["sup_dt"], self._sup_bound(rate0 / eps1), t)

            if self._last_energy is not None and self._last_energy[0] == stage:
                tol = ENERGY_STEP_TOL * (1.0 + self.Lambda ** 2)
                self._check("energy", row["energy"] - self._last_energy[1], tol, t)
        self._last_energy = (stage, row["energy"]) if stage in CONSTANT_FIELD_STAGES else None
        return row

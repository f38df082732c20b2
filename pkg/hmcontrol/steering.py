# steering.py
"""
Leg-by-leg steering of the director field.

One leg drives d towards its target a:
  * stages 0-4: uniform field H = lambda(t) a, monitored by StageMonitor;
  * stage 5: rotate so that a becomes e3, read the residual in the chart,
    compute an internal control by the Picard/HUM loop, and apply the
    synthesized field (rotated back) to the director system.

The full run chains four legs e -> e -> p1 -> p2 -> p over [0, T].
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .errors import NoConvergence
from .field_synthesis import synthesize_field, uniform_field
from .geometry import CHART_CAP, check_chart_cap, rotate_field, stereo_invert
from .grid import Grid, l2_norm, w1inf_norm
from .logs import log_event
from .monitors import StageMonitor, TrajectoryReport, hemisphere_margin
from .null_control import PicardResult, picard_null_control
from .stage_control import (
    FIELD_STAGES,
    Schedule,
    build_leg_schedule,
    lambda_profile,
    stage_of,
    steps_per_stage,
    waypoints,
)
from .stepping import step_director_with_drift

LEGS = 4


@dataclass
class NullStageSettings:
    steps: int = 20
    penalty: float = 1e-8
    hum_tol: float = 1e-10
    hum_maxit: int = 3000
    outer_tol: float = 1e-8
    outer_maxit: int = 10
    terminal_ratio: float = 1e-2
    chart_cap: float = CHART_CAP


@dataclass
class LegOutcome:
    leg: int
    schedule: Schedule
    eps0: float
    d_after_field: np.ndarray
    d_final: np.ndarray
    chart_norm_before: float
    chart_w1inf_before: float
    picard: Optional[PicardResult]
    picard_converged: bool
    final_error: float


@dataclass
class SteeringOutcome:
    legs: List[LegOutcome] = field(default_factory=list)
    d_final: Optional[np.ndarray] = None
    final_error: float = float("nan")


def sup_distance(d: np.ndarray, p) -> float:
    return float(np.max(np.linalg.norm(np.asarray(d) - np.asarray(p, dtype=float), axis=-1)))


# -------------------------------------------------------------------
# Stages
# -------------------------------------------------------------------
def run_field_stages(grid: Grid, d0: np.ndarray, schedule: Schedule, dt: float, monitor: StageMonitor,
                     t_offset: float = 0.0, last_stage: int = FIELD_STAGES - 1) -> np.ndarray:
    """Uniform-field stages 0..last_stage. Step size is T0 / ceil(T0 / dt)."""
    n = steps_per_stage(schedule.T0, dt)
    h = schedule.T0 / n
    axis = schedule.target
    d = np.asarray(d0, dtype=float)
    monitor.observe(t_offset, 0, 0.0, d, None)
    for k in range((last_stage + 1) * n):
        stage = stage_of(k * h, schedule)
        lam = lambda_profile(k * h, schedule)
        H = uniform_field(grid.shape, lam, axis) if lam > 0.0 else None
        d_next, drift = step_director_with_drift(grid, d, H, h)
        t = t_offset + (k + 1) * h
        monitor.observe(t, stage, lam, d_next, H, drift=drift, d_prev=d, dt=h)
        d = d_next
    return d


def run_null_stage(grid: Grid, d: np.ndarray, schedule: Schedule, dt: float, monitor: StageMonitor,
                   settings: NullStageSettings, t_offset: float = 0.0):
    """Chart-based null control on [5T0, 6T0]; returns (d, picard result or None, converged)."""
    R = schedule.rotation
    T = schedule.T0
    v0 = stereo_invert(rotate_field(R, d))
    warned = check_chart_cap(v0, settings.chart_cap, leg=monitor.leg, stage=FIELD_STAGES) > settings.chart_cap
    try:
        picard = picard_null_control(grid, v0, T, settings.steps, settings.outer_tol, settings.outer_maxit,
                                     settings.penalty, settings.hum_tol, settings.hum_maxit,
                                     settings.terminal_ratio)
        converged = True
    except NoConvergence as exc:
        picard = exc.result
        converged = False
        log_event("WARNING", "Null control stage did not converge; applying the partial control",
                  leg=monitor.leg, terminal_norm=exc.terminal_norm)

    slab = T / settings.steps
    sub = steps_per_stage(slab, dt)
    h = slab / sub
    t0 = t_offset + FIELD_STAGES * schedule.T0
    for n in range(settings.steps):
        f = picard.f[n] if picard is not None else np.zeros(grid.shape + (2,))
        for s in range(sub):
            v = stereo_invert(rotate_field(R, d))
            sup_chart = check_chart_cap(v, settings.chart_cap, warn=not warned, leg=monitor.leg, stage=FIELD_STAGES)
            warned = warned or sup_chart > settings.chart_cap
            H = rotate_field(R.T, synthesize_field(v, f, grid.mask))
            d_next, drift = step_director_with_drift(grid, d, H, h)
            t = t0 + (n * sub + s + 1) * h
            monitor.observe(t, FIELD_STAGES, 0.0, d_next, H, drift=drift, d_prev=d, dt=h, sup_chart=sup_chart)
            d = d_next
    return d, picard, converged


# -------------------------------------------------------------------
# Legs
# -------------------------------------------------------------------
def run_leg(grid: Grid, d0: np.ndarray, start, target, legT: float, dt: float, leg: int,
            report: TrajectoryReport, eps4: float = 1e-3, eps0: Optional[float] = None,
            Lambda: Optional[float] = None, settings: Optional[NullStageSettings] = None,
            grid_slack: float = 0.05, noise_floor: float = 1e-9, norm_tol: float = 1e-9,
            t_offset: float = 0.0) -> LegOutcome:
    settings = settings or NullStageSettings()
    target = np.asarray(target, dtype=float)
    measured = hemisphere_margin(d0, target)
    eps0 = measured if eps0 is None else eps0
    schedule = build_leg_schedule(start, target, legT, eps0, eps4, dt=dt, Lambda=Lambda)
    log_event("INFO", "Leg started", leg=leg, eps0=eps0, Lambda=schedule.Lambda, T0=schedule.T0)

    monitor = StageMonitor(grid, d0, target, eps0=measured, leg=leg, Lambda=schedule.Lambda, report=report,
                           grid_slack=grid_slack, noise_floor=noise_floor, norm_tol=norm_tol)
    d_field = run_field_stages(grid, d0, schedule, dt, monitor, t_offset=t_offset)
    v_field = stereo_invert(rotate_field(schedule.rotation, d_field))
    chart_norm = l2_norm(grid, v_field)
    chart_w1inf = w1inf_norm(grid, v_field)
    d_final, picard, converged = run_null_stage(grid, d_field, schedule, dt, monitor, settings, t_offset)
    err = sup_distance(d_final, target)
    log_event("INFO", "Leg finished", leg=leg, final_error=err, chart_norm_before=chart_norm,
              chart_w1inf_before=chart_w1inf, picard_converged=converged)
    return LegOutcome(leg=leg, schedule=schedule, eps0=eps0, d_after_field=d_field, d_final=d_final,
                      chart_norm_before=chart_norm, chart_w1inf_before=chart_w1inf, picard=picard,
                      picard_converged=converged, final_error=err)


def steer(grid: Grid, d0: np.ndarray, e, p, T: float, dt: float, report: TrajectoryReport,
          eps4: float = 1e-3, eps0: Optional[float] = None, Lambda: Optional[float] = None,
          settings: Optional[NullStageSettings] = None, grid_slack: float = 0.05,
          noise_floor: float = 1e-9, norm_tol: float = 1e-9,
          on_leg: Optional[Callable[[LegOutcome], None]] = None) -> SteeringOutcome:
    """Four legs of length T/4 through the trisecting waypoints of e and p."""
    e = np.asarray(e, dtype=float)
    p = np.asarray(p, dtype=float)
    p1, p2 = waypoints(e, p)
    targets = [e, p1, p2, p]
    legT = T / LEGS
    outcome = SteeringOutcome()
    d = np.asarray(d0, dtype=float)
    start = e
    for k, target in enumerate(targets):
        leg = run_leg(grid, d, start, target, legT, dt, k, report, eps4=eps4, eps0=eps0, Lambda=Lambda,
                      settings=settings, grid_slack=grid_slack, noise_floor=noise_floor, norm_tol=norm_tol,
                      t_offset=k * legT)
        outcome.legs.append(leg)
        if on_leg is not None:
            on_leg(leg)
        d = leg.d_final
        start = target
    outcome.d_final = d
    outcome.final_error = sup_distance(d, p)
    return outcome

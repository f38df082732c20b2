# stage_control.py
"""
Staged steering schedule for one leg of the trajectory.

A leg of length legT is split into six sub-intervals of length T0 = legT/6:

    stage 0   [0,   T0]   field off, free heat flow
    stage 1   [T0,  2T0]  smoothstep ramp up to Lambda
    stage 2   [2T0, 3T0]  field = Lambda along the leg target
    stage 3   [3T0, 4T0]  smoothstep ramp down
    stage 4   [4T0, 5T0]  field off, settle
    stage 5   [5T0, 6T0]  internal null control in the rotated chart

Four legs (e -> e, e -> p1, p1 -> p2, p2 -> p) tile the full horizon.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import AntipodalError, DomainError, StabilityError
from .geometry import ANTIPODAL_TOL, E3, align_rotation, unit_vector
from .grid import stability_bound

STAGES_PER_LEG = 6
FIELD_STAGES = 5
DEFAULT_EPS4 = 1e-3


# -------------------------------------------------------------------
# Schedule
# -------------------------------------------------------------------
@dataclass(frozen=True)
class Schedule:
    leg_horizon: float
    T0: float
    Lambda: float
    start: np.ndarray
    target: np.ndarray
    waypoints: Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
    rotation: np.ndarray
    eps0: float
    eps4: float

    @property
    def boundaries(self) -> Tuple[float, ...]:
        return tuple(k * self.T0 for k in range(STAGES_PER_LEG + 1))

    @property
    def field_horizon(self) -> float:
        return FIELD_STAGES * self.T0

    def to_dict(self) -> dict:
        return {
            "leg_horizon": self.leg_horizon,
            "T0": self.T0,
            "Lambda": self.Lambda,
            "eps0": self.eps0,
            "eps4": self.eps4,
            "start": self.start.tolist(),
            "target": self.target.tolist(),
            "waypoints": [w.tolist() for w in self.waypoints],
            "boundaries": list(self.boundaries),
        }


def smoothstep(x):
    return x * x * (3.0 - 2.0 * x)


def _check_time(t: float, T0: float) -> float:
    end = FIELD_STAGES * T0
    tol = 1e-12 * max(1.0, end)
    if t < -tol or t > end + tol:
        raise DomainError(f"t={t} outside the field window [0, {end}]")
    return min(max(t, 0.0), end)


def lambda_profile(t: float, s: Schedule) -> float:
    T0, Lam = s.T0, s.Lambda
    t = _check_time(t, T0)
    x = t / T0
    if x <= 1.0 or x >= 4.0:
        return 0.0
    if x < 2.0:
        return Lam * smoothstep(x - 1.0)
    if x <= 3.0:
        return Lam
    return Lam * smoothstep(4.0 - x)


def lambda_slope(t: float, s: Schedule) -> float:
    """Closed-form d lambda / dt; zero on the flat stages and at every junction."""
    T0, Lam = s.T0, s.Lambda
    t = _check_time(t, T0)
    x = t / T0
    if 1.0 < x < 2.0:
        y = x - 1.0
        return Lam * 6.0 * y * (1.0 - y) / T0
    if 3.0 < x < 4.0:
        y = 4.0 - x
        return -Lam * 6.0 * y * (1.0 - y) / T0
    return 0.0


def stage_of(t: float, s: Schedule) -> int:
    k = int(math.floor(t / s.T0 + 1e-9))
    return min(max(k, 0), STAGES_PER_LEG - 1)


def steps_per_stage(T0: float, dt: float) -> int:
    """Number of steps per stage; dt is shrunk so stage boundaries land on steps."""
    if T0 <= 0 or dt <= 0:
        raise DomainError(f"T0 and dt must be positive, got T0={T0}, dt={dt}")
    return max(1, int(math.ceil(T0 / dt - 1e-9)))


# -------------------------------------------------------------------
# Amplitude and waypoints
# -------------------------------------------------------------------
def required_lambda(eps0: float, T0: float, eps4: float) -> float:
    if not (0.0 < eps0 <= 1.0):
        raise DomainError(f"eps0 must lie in (0, 1], got {eps0}")
    if T0 <= 0.0:
        raise DomainError(f"T0 must be positive, got {T0}")
    if not (0.0 < eps4 < 1.0):
        raise DomainError(f"eps4 must lie in (0, 1), got {eps4}")
    return math.sqrt(math.log(1.0 / eps4) / (eps0 * T0))


def waypoints(e, p) -> Tuple[np.ndarray, np.ndarray]:
    """Trisect the geodesic from e to p."""
    e = unit_vector(e, tol=1e-9)
    p = unit_vector(p, tol=1e-9)
    c = float(e @ p)
    if c <= -1.0 + ANTIPODAL_TOL:
        raise AntipodalError("e and p are antipodal; trisection plane undefined")
    perp = p - c * e
    s = float(np.linalg.norm(perp))
    if s < 1e-15:
        return e.copy(), e.copy()
    u = perp / s
    theta = math.atan2(s, c)
    p1 = math.cos(theta / 3.0) * e + math.sin(theta / 3.0) * u
    p2 = math.cos(2.0 * theta / 3.0) * e + math.sin(2.0 * theta / 3.0) * u
    return p1, p2


def build_leg_schedule(start, target, legT: float, eps0: float, eps4: float = DEFAULT_EPS4,
                       dt: Optional[float] = None, Lambda: Optional[float] = None) -> Schedule:
    """Lambda overrides the amplitude that required_lambda would pick."""
    if legT <= 0:
        raise DomainError(f"leg horizon must be positive, got {legT}")
    start = unit_vector(start, tol=1e-9)
    target = unit_vector(target, tol=1e-9)
    T0 = legT / STAGES_PER_LEG
    Lam = required_lambda(eps0, T0, eps4) if Lambda is None else float(Lambda)
    if Lam < 0:
        raise DomainError(f"Lambda must be non-negative, got {Lam}")
    if dt is not None and dt > stability_bound(Lam):
        raise StabilityError(f"dt={dt} exceeds stability bound {stability_bound(Lam):.3e} for Lambda={Lam:.3f}")
    p1, p2 = waypoints(start, target)
    return Schedule(
        leg_horizon=legT,
        T0=T0,
        Lambda=Lam,
        start=start,
        target=target,
        waypoints=(start, p1, p2, target),
        rotation=align_rotation(target, E3),
        eps0=eps0,
        eps4=eps4,
    )

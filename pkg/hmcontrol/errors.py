# errors.py
"""
Exception hierarchy shared by the solvers, the controllers and the runner.
The runner maps MonitorViolation to exit 1 and everything else to exit 2.
"""

from typing import Any, Optional


class HMControlError(Exception):
    """Base class for every error raised by hmcontrol."""


class DomainError(HMControlError, ValueError):
    """A precondition on the arguments was violated."""


class PoleError(DomainError):
    """Point too close to -e3, the excluded point of the stereographic chart."""


class AntipodalError(DomainError):
    """Two directions are antipodal; the rotation axis is undefined."""


class GridError(DomainError):
    """Invalid grid or control region."""


class StabilityError(HMControlError):
    """Time step above the stability guard, or a step blew up."""


class ChartBlowupError(HMControlError):
    """Chart coordinates exceeded the magnitude cap."""


class ConfigError(HMControlError):
    """Run config could not be read or failed validation."""


class NoConvergence(HMControlError):
    def __init__(self, message: str, terminal_norm: float = float("nan"),
                 iterations: int = 0, result: Optional[Any] = None):
        super().__init__(message)
        self.terminal_norm = terminal_norm
        self.iterations = iterations
        self.result = result


class MonitorViolation(HMControlError):
    def __init__(self, monitor: str, measured: float, bound: float,
                 time: float = float("nan")):
        super().__init__(
            f"monitor '{monitor}' violated at t={time:.6g}: measured={measured:.6g} bound={bound:.6g}"
        )
        self.monitor = monitor
        self.measured = measured
        self.bound = bound
        self.time = time

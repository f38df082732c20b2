# config.py
"""
Run configuration: a pydantic model tree loaded from YAML.
Any read, parse or schema failure surfaces as ConfigError.
"""

import hashlib
import json
import os
from typing import List, Literal, Optional

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

load_dotenv()

EXPERIMENTS = ("verify-geometry", "stage1", "equivalence", "hum", "steer")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridConfig(_Section):
    dim: Literal[1, 2] = 1
    extents: List[float] = [1.0]
    counts: List[int] = [201]

    @model_validator(mode="after")
    def _match_dim(self):
        if len(self.extents) != self.dim or len(self.counts) != self.dim:
            raise ValueError(f"extents and counts need {self.dim} entries")
        return self


class OmegaConfig(_Section):
    fraction: Optional[List[float]] = None
    center: Optional[List[float]] = None


class InitialDataConfig(_Section):
    preset: Literal["constant", "tilted-cone", "random-smooth", "file"] = "tilted-cone"
    axis: List[float] = [0.0, 0.0, 1.0]
    cone_angle_deg: float = 60.0
    modes: int = Field(1, ge=0)
    path: Optional[str] = None


class ScheduleConfig(_Section):
    horizon: float = Field(1.2, gt=0)
    target: List[float] = [1.0, 0.0, 0.0]
    eps4: float = Field(1e-3, gt=0, lt=1)
    Lambda: Optional[float] = Field(None, ge=0)
    eps0: Optional[float] = Field(None, gt=0, le=1)
    lambda_sweep: List[float] = []
    # stage1 bound-excess refinement study (dx and dt halved) per Lambda
    refine_lambdas: List[float] = []


class SolverConfig(_Section):
    dt: float = Field(1e-4, gt=0)
    norm_tol: float = 1e-9
    null_steps: int = Field(20, ge=1)
    penalty: float = Field(1e-8, gt=0)
    hum_tol: float = Field(1e-10, gt=0)
    hum_maxit: int = Field(3000, ge=1)
    outer_tol: float = Field(1e-8, gt=0)
    outer_maxit: int = Field(10, ge=1)
    terminal_ratio: float = Field(1e-2, gt=0)
    final_tol: float = Field(1e-2, gt=0)
    # W^{1,inf} size of the chart data the Picard loop is trusted with
    chart_smallness: float = Field(0.25, gt=0)


class MonitorConfig(_Section):
    grid_slack: float = Field(0.05, ge=0)
    noise_floor: float = Field(1e-9, ge=0)


class HumConfig(_Section):
    horizon: float = Field(0.1, gt=0)
    steps: int = Field(100, ge=1)
    penalty: float = Field(1e-6, gt=0)
    profile: Literal["cosine", "cone-chart"] = "cosine"
    penalty_sweep: List[float] = []
    target_ratio: float = 1e-2
    picard_amplitude: Optional[float] = None
    picard_horizon: float = Field(0.05, gt=0)


class EquivalenceConfig(_Section):
    horizon: float = Field(0.05, gt=0)
    chart_amplitude: float = Field(0.2, gt=0)
    control_amplitude: float = 1.0
    tolerance: float = 5e-3
    refine: bool = False
    # dx study runs on a coarse grid at a tiny dt; the dt study on the run grid
    dx_counts: Optional[List[int]] = None
    dx_dt: float = Field(1e-6, gt=0)
    dx_order_min: float = 1.8
    dt_order_min: float = 0.8


class RunConfig(_Section):
    experiment: Literal["verify-geometry", "stage1", "equivalence", "hum", "steer"]
    seed: int = 0
    output_dir: str = "runs/default"
    grid: GridConfig
    omega: OmegaConfig = OmegaConfig()
    initial_data: InitialDataConfig = InitialDataConfig()
    schedule: ScheduleConfig = ScheduleConfig()
    solver: SolverConfig = SolverConfig()
    monitors: MonitorConfig = MonitorConfig()
    hum: HumConfig = HumConfig()
    equivalence: EquivalenceConfig = EquivalenceConfig()

    @model_validator(mode="after")
    def _dx_counts_match_grid(self):
        counts = self.equivalence.dx_counts
        if counts is not None and len(counts) != self.grid.dim:
            raise ValueError(f"equivalence.dx_counts needs {self.grid.dim} entries")
        return self

    @field_validator("seed")
    @classmethod
    def _seed_non_negative(cls, v: int) -> int:
        if v < 0:
            raise ValueError("seed must be non-negative")
        return v


# -------------------------------------------------------------------
# Loading
# -------------------------------------------------------------------
def load_config(path: str, overrides: Optional[dict] = None) -> RunConfig:
    try:
        with open(path, "r") as f:
            data = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping, got {type(data).__name__}")
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    return parse_config(data)


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig(**data)
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def config_hash(config: RunConfig) -> str:
    """sha256 of the canonical JSON dump; the output directory does not count."""
    canonical = json.dumps(config.model_dump(mode="json", exclude={"output_dir"}), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def worker_count(default: int = 1) -> int:
    try:
        return max(1, int(os.getenv("HMCONTROL_WORKERS", str(default))))
    except ValueError:
        return default

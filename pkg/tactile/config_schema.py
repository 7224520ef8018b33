import hashlib
import json
import math
from enum import StrEnum
from pathlib import Path
from typing import Annotated, Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from tactile.exceptions import ConfigError

Vector6 = Annotated[list[float], Field(min_length=6, max_length=6)]
Bounds = Annotated[list[float], Field(min_length=4, max_length=4)]
Range = Annotated[list[float], Field(min_length=2, max_length=2)]


class SurfaceKind(StrEnum):
    PLANAR = "planar"
    INCLINED = "inclined"
    CURVED = "curved"
    HEIGHTFIELD = "custom-heightfield"


class Pattern(StrEnum):
    LINE = "line"
    ZIGZAG = "zigzag"
    SPIRAL = "spiral"
    ARC = "arc"
    RANDOM_WALK = "random_walk"


class TankMode(StrEnum):
    SCALAR_LOW = "scalar_low"
    SCALAR_HIGH = "scalar_high"
    SCHEDULED = "scheduled"


def _check_bounds(bounds: list[float], name: str) -> list[float]:
    if not (bounds[0] < bounds[1] and bounds[2] < bounds[3]):
        raise ValueError(f"{name} must be [u_min, u_max, v_min, v_max] with min < max")
    return bounds


def _check_non_negative(values: list[float], name: str) -> list[float]:
    if any(v < 0 or not math.isfinite(v) for v in values):
        raise ValueError(f"{name} entries must be finite and non-negative")
    return values


class SurfaceConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: SurfaceKind = SurfaceKind.PLANAR
    mu: float = Field(default=0.4, gt=0, le=1)
    k_n: float = Field(default=10_000.0, gt=0)
    b_n: float = Field(default=50.0, ge=0)
    amplitude: float = 0.02
    frequency: float = 10.0
    incline_grade: float = 0.2
    # h(u, v) = sum_ij coefficients[i][j] * u**i * v**j for custom heightfields
    coefficients: list[list[float]] = Field(default_factory=lambda: [[0.0]])
    gap_u_min: float | None = None
    gap_u_max: float | None = None
    gap_v_min: float | None = None
    gap_v_max: float | None = None
    gap_depth: float | None = Field(default=None, gt=0)
    workspace: Bounds = Field(default_factory=lambda: [-0.6, 0.6, -0.6, 0.6])
    v_reg: float = Field(default=1e-3, gt=0)

    @field_validator("workspace")
    @classmethod
    def validate_workspace(cls, v: list[float]) -> list[float]:
        return _check_bounds(v, "workspace")

    @field_validator("coefficients")
    @classmethod
    def validate_coefficients(cls, v: list[list[float]]) -> list[list[float]]:
        if not v or any(len(row) != len(v[0]) for row in v) or not v[0]:
            raise ValueError("coefficients must be a non-empty rectangular matrix")
        return v

    @model_validator(mode="after")
    def validate_gap(self) -> "SurfaceConfig":
        for lo, hi, axis in ((self.gap_u_min, self.gap_u_max, "u"), (self.gap_v_min, self.gap_v_max, "v")):
            if lo is not None and hi is not None and lo >= hi:
                raise ValueError(f"gap_{axis}_min must be smaller than gap_{axis}_max")
        return self

    @property
    def has_gap(self) -> bool:
        return any(b is not None for b in (self.gap_u_min, self.gap_u_max, self.gap_v_min, self.gap_v_max))


def default_surfaces() -> dict[str, SurfaceConfig]:
    """Curved training surface, planar and inclined transfer surfaces, and the contact-loss board."""
    return {
        "curved": SurfaceConfig(kind=SurfaceKind.CURVED),
        "planar": SurfaceConfig(kind=SurfaceKind.PLANAR),
        "inclined": SurfaceConfig(kind=SurfaceKind.INCLINED),
        "planar_gap": SurfaceConfig(kind=SurfaceKind.PLANAR, gap_u_min=0.05, gap_depth=0.08),
    }


class DynamicsConfig(BaseModel):
    inertia: Vector6 = Field(default_factory=lambda: [3.0, 3.0, 3.0, 0.1, 0.1, 0.1])
    damping: Vector6 = Field(default_factory=lambda: [40.0, 40.0, 40.0, 2.0, 2.0, 2.0])
    gravity_wrench: Vector6 = Field(default_factory=lambda: [0.0, 0.0, 3.0 * 9.81, 0.0, 0.0, 0.0])
    dt: float = Field(default=1e-3, gt=0)

    @field_validator("inertia")
    @classmethod
    def validate_inertia(cls, v: list[float]) -> list[float]:
        if any(m <= 0 for m in v):
            raise ValueError("inertia diagonal must be strictly positive")
        return v

    @field_validator("damping")
    @classmethod
    def validate_damping(cls, v: list[float]) -> list[float]:
        return _check_non_negative(v, "damping")


class ControllerConfig(BaseModel):
    stiffness: Vector6 = Field(default_factory=lambda: [1000.0, 1000.0, 1000.0, 50.0, 50.0, 50.0])
    damping: Vector6 = Field(default_factory=lambda: [60.0, 60.0, 60.0, 5.0, 5.0, 5.0])
    # The force loop is closed on the tool-normal axis only by default
    force_p_gain: Vector6 = Field(default_factory=lambda: [0.0, 0.0, 0.5, 0.0, 0.0, 0.0])
    force_i_gain: Vector6 = Field(default_factory=lambda: [0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
    integral_limit: float = Field(default=20.0, gt=0)
    force_noise_std: float = Field(default=0.1, ge=0)

    @field_validator("stiffness", "damping", "force_p_gain", "force_i_gain")
    @classmethod
    def validate_gains(cls, v: list[float]) -> list[float]:
        return _check_non_negative(v, "gain")


class TankConfig(BaseModel):
    epsilon: float = Field(default=0.1, gt=0)
    epsilon_on: float | None = None
    low_energy: float = Field(default=0.03, ge=0)
    high_energy: float = Field(default=200.0, ge=0)
    scheduled_headroom: float = Field(default=0.05, ge=0)
    max_energy: float | None = Field(default=None, gt=0)
    injection_gain: float = Field(default=1.0, gt=0)
    parameterization: Literal["time", "arclength"] = "time"

    @model_validator(mode="after")
    def validate_thresholds(self) -> "TankConfig":
        if self.epsilon_on is not None and self.epsilon_on < self.epsilon:
            raise ValueError("epsilon_on must not be smaller than epsilon")
        return self

    @property
    def rearm_threshold(self) -> float:
        return self.epsilon_on if self.epsilon_on is not None else 2.0 * self.epsilon


class PatternShapeConfig(BaseModel):
    zigzag_segment: float = Field(default=0.05, gt=0)
    zigzag_angle: float = Field(default=math.pi / 4, gt=0, lt=math.pi / 2)
    spiral_pitch: float = Field(default=0.02, gt=0)
    arc_radius: float = Field(default=0.15, gt=0)
    walk_turn_std: float = Field(default=8.0, ge=0)
    walk_correlation: float = Field(default=0.02, gt=0)


class SkillGenConfig(BaseModel):
    surface: str = "curved"
    count: int = Field(default=40, ge=0)
    patterns: list[Pattern] = Field(default_factory=lambda: list(Pattern))
    speed_range: Range = Field(default_factory=lambda: [0.02, 0.06])
    duration_range: Range = Field(default_factory=lambda: [5.0, 12.0])
    start_region: Bounds = Field(default_factory=lambda: [-0.15, 0.15, -0.15, 0.15])
    heading_spread: float = Field(default=math.pi / 6, ge=0)
    desired_force: Vector6 = Field(default_factory=lambda: [0.0, 0.0, -5.0, 0.0, 0.0, 0.0])
    dwell: float = Field(default=0.0, ge=0)
    shape: PatternShapeConfig = Field(default_factory=PatternShapeConfig)

    @field_validator("patterns")
    @classmethod
    def validate_patterns(cls, v: list[Pattern]) -> list[Pattern]:
        if not v:
            raise ValueError("at least one pattern is required")
        return v

    @field_validator("speed_range", "duration_range")
    @classmethod
    def validate_range(cls, v: list[float]) -> list[float]:
        if not (0 < v[0] <= v[1]):
            raise ValueError("ranges must satisfy 0 < low <= high")
        return v

    @field_validator("start_region")
    @classmethod
    def validate_start_region(cls, v: list[float]) -> list[float]:
        return _check_bounds(v, "start_region")


class ModelConfig(BaseModel):
    window: int = Field(default=100, ge=1)
    kernel_size: int = Field(default=4, ge=1)
    filters: int = Field(default=64, ge=1)
    dilations: list[int] = Field(default_factory=lambda: [1, 2, 4])
    dropout: float = Field(default=0.05, ge=0, lt=1)
    decoder_hidden: int = Field(default=64, ge=1)

    @model_validator(mode="after")
    def validate_receptive_field(self) -> "ModelConfig":
        if not self.dilations or any(d < 1 for d in self.dilations):
            raise ValueError("dilations must be positive integers")
        if self.receptive_field > self.window:
            raise ValueError(f"receptive field {self.receptive_field} exceeds window {self.window}")
        return self

    @property
    def receptive_field(self) -> int:
        return 1 + 2 * (self.kernel_size - 1) * sum(self.dilations)


class TrainConfig(BaseModel):
    learning_rate: float = Field(default=1e-4, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_eps: float = Field(default=1e-8, gt=0)
    epochs: int = Field(default=20, ge=1)
    batch_size: int = Field(default=64, ge=1)
    seed: int = Field(default=0, ge=0)
    windows_per_epoch: int | None = Field(default=6400, ge=1)
    eval_stride: int = Field(default=10, ge=1)
    trainable: Literal["all", "decoder"] = "all"
    divergence_factor: float = Field(default=10.0, gt=1)
    # Percent; an already accurate initialization is compared against this instead of its own MAPE
    divergence_floor: float = Field(default=1.0, gt=0)
    stats_stride: int = Field(default=10, ge=1)
    split: list[float] = Field(default_factory=lambda: [0.8, 0.1, 0.1])

    @field_validator("split")
    @classmethod
    def validate_split(cls, v: list[float]) -> list[float]:
        if len(v) != 3 or any(s < 0 for s in v) or not math.isclose(sum(v), 1.0):
            raise ValueError("split must be three non-negative fractions summing to 1")
        return v


class HeatmapConfig(BaseModel):
    surface: str = "curved"
    pattern: Pattern = Pattern.LINE
    speed: float = Field(default=0.05, gt=0)
    length: float = Field(default=0.1, gt=0)
    heading: float = 0.0
    region: Bounds = Field(default_factory=lambda: [-0.3, 0.3, -0.3, 0.3])
    nodes_u: int = Field(default=20, ge=2)
    nodes_v: int = Field(default=20, ge=2)

    @field_validator("region")
    @classmethod
    def validate_region(cls, v: list[float]) -> list[float]:
        return _check_bounds(v, "region")


class SafetyConfig(BaseModel):
    surface: str = "planar_gap"
    # Normal-axis impedance used in the contact-loss run; the tool follows the force command along z
    normal_stiffness: float = Field(default=0.0, ge=0)
    normal_damping: float = Field(default=20.0, ge=0)
    start_uv: Range = Field(default_factory=lambda: [-0.2, 0.0])
    heading: float = 0.0
    speed: float = Field(default=0.05, gt=0)
    length: float = Field(default=0.27, gt=0)
    settle_time: float = Field(default=1.0, ge=0)
    modes: list[TankMode] = Field(default_factory=lambda: list(TankMode))


class TransferConfig(BaseModel):
    surfaces: list[str] = Field(default_factory=lambda: ["planar", "inclined"])
    skills_per_surface: int = Field(default=10, ge=1)


class CompareConfig(BaseModel):
    surface: str = "curved"
    pattern: Pattern = Pattern.LINE
    start_uv: Range = Field(default_factory=lambda: [-0.2, 0.0])
    heading: float = 0.0
    speed: float = Field(default=0.05, gt=0)
    length: float = Field(default=0.4, gt=0)
    transient: float = Field(default=1.0, ge=0)


class EstimateConfig(BaseModel):
    skill_files: list[Path] = Field(default_factory=list)

    @field_validator("skill_files")
    @classmethod
    def validate_files_exist(cls, v: list[Path]) -> list[Path]:
        missing = [str(p) for p in v if not p.exists()]
        if missing:
            raise ValueError(f"skill files not found: {', '.join(missing)}")
        return v


class ExperimentConfig(BaseModel):
    name: str = "tactile-morph"
    seed: int = Field(default=0, ge=0)
    log_format: str = Field(default="text")
    scheduler: Literal["threads", "processes", "synchronous"] = "threads"
    surfaces: dict[str, SurfaceConfig] = Field(default_factory=lambda: default_surfaces())
    dynamics: DynamicsConfig = Field(default_factory=DynamicsConfig)
    controller: ControllerConfig = Field(default_factory=ControllerConfig)
    tank: TankConfig = Field(default_factory=TankConfig)
    skills: SkillGenConfig = Field(default_factory=SkillGenConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    training: TrainConfig = Field(default_factory=TrainConfig)
    heatmap: HeatmapConfig = Field(default_factory=HeatmapConfig)
    safety: SafetyConfig = Field(default_factory=SafetyConfig)
    transfer: TransferConfig = Field(default_factory=TransferConfig)
    compare: CompareConfig = Field(default_factory=CompareConfig)
    estimate: EstimateConfig = Field(default_factory=EstimateConfig)

    @field_validator("log_format")
    @classmethod
    def validate_log_format(cls, v: str) -> str:
        if v not in {"text", "json"}:
            raise ValueError("log_format must be one of 'text', 'json'")
        return v

    @model_validator(mode="after")
    def validate_surface_references(self) -> "ExperimentConfig":
        referenced = {
            "skills.surface": [self.skills.surface],
            "heatmap.surface": [self.heatmap.surface],
            "safety.surface": [self.safety.surface],
            "compare.surface": [self.compare.surface],
            "transfer.surfaces": self.transfer.surfaces,
        }
        for key, names in referenced.items():
            for name in names:
                if name not in self.surfaces:
                    raise ValueError(f"{key} refers to unknown surface '{name}'")
        if not self.surfaces[self.safety.surface].has_gap:
            raise ValueError(f"safety.surface '{self.safety.surface}' must define a gap region")
        return self

    def surface(self, name: str) -> SurfaceConfig:
        return self.surfaces[name]


def _read_yaml(path: Path) -> dict[str, Any]:
    try:
        with path.open() as f:
            raw = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"Failed to read configuration {path}: {e}") from e
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"Configuration {path} must be a key-value mapping")
    return raw


def load_config(path: Path) -> ExperimentConfig:
    """Loads and validates an experiment configuration file.

    Surfaces listed under `surface_files` are read from standalone definition files,
    relative to the configuration file, and added to the named surfaces.
    """
    raw = _read_yaml(path)
    files = raw.pop("surface_files", None) or {}
    if not isinstance(files, dict):
        raise ConfigError(f"surface_files in {path} must map surface names to files")
    if files:
        surfaces = raw.get("surfaces")
        if surfaces is None:
            surfaces = {name: surface.model_dump(mode="json") for name, surface in default_surfaces().items()}
        for name, file in files.items():
            surfaces[name] = load_surface_config(path.parent / file).model_dump(mode="json")
        raw["surfaces"] = surfaces
    try:
        return ExperimentConfig(**raw)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration {path}: {e}") from e


def load_surface_config(path: Path) -> SurfaceConfig:
    """Loads a standalone surface definition file."""
    raw = _read_yaml(path)
    try:
        return SurfaceConfig(**raw)
    except ValidationError as e:
        raise ConfigError(f"Invalid surface definition {path}: {e}") from e


def config_hash(config: BaseModel) -> str:
    """Returns the sha256 of the canonical JSON dump of a configuration."""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()

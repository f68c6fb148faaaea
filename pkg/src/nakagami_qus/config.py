import copy
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigurationError
from .models import DEFAULT_CLAMP, EstimatorMethod


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class WindowSpec(_Section):
    """Square sliding window: odd size, stride between evaluated centers, edge policy"""
    size: int = 11
    stride: int = 1
    padding: Literal["reflect", "replicate"] = "reflect"

    @field_validator("size")
    @classmethod
    def validate_size(cls, v: int) -> int:
        if v < 1 or v % 2 == 0:
            raise ValueError("window size must be an odd positive integer")
        return v

    @model_validator(mode="after")
    def validate_stride(self) -> "WindowSpec":
        if not 1 <= self.stride <= self.size:
            raise ValueError("stride must satisfy 1 <= stride <= size")
        return self

    def describe(self) -> str:
        return str(self.size) if self.stride == 1 else f"{self.size}/{self.stride}"


class FilterSpec(_Section):
    kind: Literal["median", "average", "none"] = "median"
    size: int = 3

    @field_validator("size")
    @classmethod
    def validate_size(cls, v: int) -> int:
        if v < 1 or v % 2 == 0:
            raise ValueError("filter kernel size must be an odd positive integer")
        return v

    @classmethod
    def parse(cls, text: str) -> "FilterSpec":
        """Parse ``median:k``, ``average:k`` or ``none``."""
        kind, _, size = text.strip().partition(":")
        if kind == "none":
            return cls(kind="none")
        if not size:
            raise ValueError(f"filter '{text}' needs a kernel size, e.g. median:3")
        return cls(kind=kind, size=int(size))

    def describe(self) -> str:
        return "none" if self.kind == "none" else f"{self.kind}:{self.size}"


class OmegaMode(_Section):
    kind: Literal["global", "local", "fixed"] = "global"
    window: Optional[int] = None
    value: Optional[float] = None

    @model_validator(mode="after")
    def validate_mode(self) -> "OmegaMode":
        if self.kind == "local":
            if self.window is None or self.window < 1 or self.window % 2 == 0:
                raise ValueError("local omega mode needs an odd positive window")
        if self.kind == "fixed":
            if self.value is None or not self.value > 0:
                raise ValueError("fixed omega mode needs a positive value")
        return self

    @classmethod
    def parse(cls, text: str) -> "OmegaMode":
        """Parse ``global``, ``local:k`` or ``fixed:v``."""
        kind, _, arg = text.strip().partition(":")
        if kind == "local":
            return cls(kind="local", window=int(arg))
        if kind == "fixed":
            return cls(kind="fixed", value=float(arg))
        return cls(kind=kind)

    def describe(self) -> str:
        if self.kind == "local":
            return f"local:{self.window}"
        if self.kind == "fixed":
            return f"fixed:{self.value}"
        return "global"


class UnicornConfig(_Section):
    omega_mode: OmegaMode = Field(default_factory=OmegaMode)
    filter: FilterSpec = Field(default_factory=FilterSpec)
    denominator_epsilon: float = 1e-3
    clamp: Tuple[float, float] = DEFAULT_CLAMP

    @field_validator("denominator_epsilon")
    @classmethod
    def validate_epsilon(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("denominator_epsilon must be positive")
        return v

    @field_validator("clamp")
    @classmethod
    def validate_clamp(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if not 0 < v[0] < v[1]:
            raise ValueError("clamp must satisfy 0 < m_min < m_max")
        return v


class Topology(_Section):
    """Encoder-decoder layout of the score network"""
    levels: int = 2
    channels: Tuple[int, ...] = (16, 32)
    kernel_size: int = 3
    activation: Literal["silu"] = "silu"

    @model_validator(mode="after")
    def validate_topology(self) -> "Topology":
        if self.levels < 1 or len(self.channels) != self.levels:
            raise ValueError("channels must list one width per level")
        if any(c < 1 for c in self.channels):
            raise ValueError("channel widths must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be an odd positive integer")
        return self


class TrainConfig(_Section):
    batch_size: int = Field(default=16, ge=1)
    learning_rate: float = Field(default=2e-4, gt=0)
    epochs: int = Field(default=20, ge=1)
    weight_decay: float = Field(default=0.01, ge=0)
    seed: int = 0
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(default=1e-8, gt=0)
    precision: Literal["float64", "float32"] = "float64"
    # sigma^-2 weighting with antithetic noise pairs, or the plain residual loss
    weighting: Literal["inverse_variance", "none"] = "inverse_variance"
    lr_schedule: Literal["constant", "cosine"] = "cosine"
    min_lr_ratio: float = Field(default=0.05, ge=0, le=1)
    # random horizontal and vertical flips of each batch
    augment: bool = True

    @field_validator("adam_betas")
    @classmethod
    def validate_betas(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if not all(0 < b < 1 for b in v):
            raise ValueError("adam_betas must lie in (0, 1)")
        return v


class AnnealingSchedule(_Section):
    """Linear decay of the perturbation scale delta from sigma_max to sigma_min"""
    sigma_min: float = 0.01
    sigma_max: float = 0.1
    total_steps: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def validate_range(self) -> "AnnealingSchedule":
        if not 0 < self.sigma_min <= self.sigma_max:
            raise ValueError("schedule must satisfy 0 < sigma_min <= sigma_max")
        return self


GeneratorName = Literal["ramp", "disk", "checkerboard", "strokes", "lesion"]


class DatasetSection(_Section):
    generators: List[GeneratorName] = Field(default_factory=lambda: ["ramp", "disk"])
    count: int = Field(default=64, ge=2)
    height: int = Field(default=32, ge=1)
    width: int = Field(default=32, ge=1)
    train_fraction: float = Field(default=0.8, gt=0, lt=1)
    seed: int = 0
    source_dir: Optional[Path] = None
    lesion_m: float = 0.6
    background_m: float = 1.2


class SimulateSection(_Section):
    omega: float = Field(default=1.0, gt=0)
    seed: int = 1


class TrainSection(_Section):
    config: TrainConfig = Field(default_factory=TrainConfig)
    schedule: AnnealingSchedule = Field(default_factory=AnnealingSchedule)
    topology: Topology = Field(default_factory=Topology)
    checkpoint: str = "score_network.nksn"


class EstimateSection(_Section):
    method: EstimatorMethod = EstimatorMethod.MOMENT
    window: WindowSpec = Field(default_factory=WindowSpec)
    sizes: List[int] = Field(default_factory=lambda: [9, 11, 13])
    unicorn: UnicornConfig = Field(default_factory=UnicornConfig)
    checkpoint: Optional[str] = None
    split: Literal["train", "test"] = "test"
    clamp: Tuple[float, float] = DEFAULT_CLAMP
    write_scores: bool = False

    @field_validator("sizes")
    @classmethod
    def validate_sizes(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("sizes must not be empty")
        if any(s < 1 or s % 2 == 0 for s in v):
            raise ValueError("every WMC size must be an odd positive integer")
        if len(set(v)) != len(v):
            raise ValueError("WMC sizes must be distinct")
        return v


class EvaluateSection(_Section):
    data_range: float = Field(default=1.5, gt=0)
    bins: int = Field(default=50, ge=1)
    hist_range: Tuple[float, float] = (0.0, 3.0)


class BenchmarkSection(_Section):
    moment_sizes: List[int] = Field(default_factory=lambda: [9, 11, 13])
    wmc_size_sets: List[List[int]] = Field(default_factory=lambda: [[9, 11, 13], [7, 9, 11, 13, 15]])
    include_measurement: bool = True
    include_unfiltered: bool = True


class PathsSection(_Section):
    input: Path = Path("runs/default")
    output: Path = Path("runs/default")


class RunConfig(_Section):
    preset: Optional[str] = None
    dataset: DatasetSection = Field(default_factory=DatasetSection)
    simulate: SimulateSection = Field(default_factory=SimulateSection)
    train: TrainSection = Field(default_factory=TrainSection)
    estimate: EstimateSection = Field(default_factory=EstimateSection)
    evaluate: EvaluateSection = Field(default_factory=EvaluateSection)
    benchmark: BenchmarkSection = Field(default_factory=BenchmarkSection)
    paths: PathsSection = Field(default_factory=PathsSection)


# Per-dataset hyperparameter presets, scaled to desk-size data.
PRESETS: Dict[str, Dict[str, Any]] = {
    "mnist": {
        "dataset": {"generators": ["strokes"], "height": 28, "width": 28},
        "train": {
            "config": {"batch_size": 64, "learning_rate": 2e-4, "epochs": 100},
            "schedule": {"sigma_min": 0.01, "sigma_max": 0.1},
        },
        "estimate": {"unicorn": {"filter": {"kind": "median", "size": 3}}},
    },
    "busi": {
        "dataset": {"generators": ["ramp", "disk"], "height": 32, "width": 32},
        "train": {
            "config": {"batch_size": 16, "learning_rate": 2e-4, "epochs": 50},
            "schedule": {"sigma_min": 0.03, "sigma_max": 0.1},
        },
        "estimate": {"unicorn": {"filter": {"kind": "median", "size": 3}}},
    },
    "oasbud": {
        "dataset": {"generators": ["lesion"], "height": 64, "width": 64},
        "train": {
            "config": {"batch_size": 16, "learning_rate": 2e-4, "epochs": 50},
            "schedule": {"sigma_min": 0.03, "sigma_max": 0.1},
        },
        "estimate": {"unicorn": {"filter": {"kind": "average", "size": 5}}},
    },
}


def _deep_merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_config(path: Optional[Path] = None) -> Dict[str, Any]:
    """Load the raw configuration mapping.

    The file comes from ``path`` or the ``NAKAGAMI_CONFIG`` environment variable
    (read through ``.env`` when present). A ``preset`` key pulls in one of PRESETS
    underneath the file's own values.
    """
    load_dotenv()

    if path is None and os.getenv("NAKAGAMI_CONFIG"):
        path = Path(os.environ["NAKAGAMI_CONFIG"])

    raw: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as handle:
                raw = yaml.safe_load(handle) or {}
        except FileNotFoundError:
            raise ConfigurationError(f"Configuration file not found: {path}", {"path": str(path)})
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Configuration file is not valid YAML: {e}", {"path": str(path)})
        if not isinstance(raw, dict):
            raise ConfigurationError("Configuration file must hold a mapping at the top level")

    preset = raw.get("preset") or os.getenv("NAKAGAMI_PRESET")
    if preset:
        if preset not in PRESETS:
            raise ConfigurationError(
                f"Unknown preset '{preset}'", {"field": "preset", "allowed": sorted(PRESETS)}
            )
        raw = _deep_merge(PRESETS[preset], raw)
        raw["preset"] = preset
    return raw


def _describe_validation_error(e: ValidationError) -> ConfigurationError:
    first = e.errors()[0]
    field = ".".join(str(part) for part in first["loc"])
    return ConfigurationError(
        f"Invalid configuration field '{field}': {first['msg']}",
        {"field": field, "errors": len(e.errors())},
    )


def load_validated_config(
    path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None
) -> RunConfig:
    raw = load_config(path)
    if overrides:
        raw = _deep_merge(raw, overrides)
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise _describe_validation_error(e)


def build_overrides(
    seed: Optional[int] = None,
    method: Optional[str] = None,
    window: Optional[int] = None,
    sizes: Optional[str] = None,
    filter_text: Optional[str] = None,
    omega_text: Optional[str] = None,
    out: Optional[Path] = None,
    input_dir: Optional[Path] = None,
    checkpoint: Optional[Path] = None,
) -> Dict[str, Any]:
    """Translate CLI flags into a nested override mapping."""
    overrides: Dict[str, Any] = {}

    def put(section: str, key: str, value: Any) -> None:
        overrides.setdefault(section, {})[key] = value

    try:
        if seed is not None:
            put("dataset", "seed", seed)
            put("simulate", "seed", seed)
            overrides.setdefault("train", {}).setdefault("config", {})["seed"] = seed
        if method is not None:
            put("estimate", "method", method)
        if checkpoint is not None:
            put("estimate", "checkpoint", str(checkpoint))
        if window is not None:
            put("estimate", "window", {"size": window})
        if sizes is not None:
            put("estimate", "sizes", [int(s) for s in sizes.split(",") if s.strip()])
        if filter_text is not None:
            unicorn = overrides.setdefault("estimate", {}).setdefault("unicorn", {})
            unicorn["filter"] = FilterSpec.parse(filter_text).model_dump()
        if omega_text is not None:
            unicorn = overrides.setdefault("estimate", {}).setdefault("unicorn", {})
            unicorn["omega_mode"] = OmegaMode.parse(omega_text).model_dump()
    except ValidationError as e:
        raise _describe_validation_error(e)
    except ValueError as e:
        raise ConfigurationError(f"Invalid command-line value: {e}")

    if out is not None:
        put("paths", "output", str(out))
    if input_dir is not None:
        put("paths", "input", str(input_dir))
    return overrides

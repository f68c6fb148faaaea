from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, TypeAlias

import numpy as np

from .errors import DomainError

# A single envelope amplitude r >= 0.
EnvelopeSample: TypeAlias = float

# Same-shape grid of score values s(r), one per envelope pixel.
ScoreImage: TypeAlias = np.ndarray

# Spread of the ground-truth m range (2.0 - 0.5); default PSNR peak.
GROUND_TRUTH_M_RANGE = (0.5, 2.0)
DEFAULT_CLAMP = (0.01, 10.0)


class Regime(str, Enum):
    """Scattering regime indexed by the Nakagami shape m"""
    PRE_RAYLEIGH = "pre-Rayleigh"
    RAYLEIGH = "Rayleigh"
    POST_RAYLEIGH = "post-Rayleigh"


class EstimatorMethod(str, Enum):
    MOMENT = "moment"
    ML = "ml"
    WMC = "wmc"
    UNICORN = "unicorn"
    MEASUREMENT = "measurement"


@dataclass(frozen=True)
class NakagamiParams:
    """Shape m and scale omega = E[R^2] of the envelope distribution"""
    m: float
    omega: float = 1.0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.m) and self.m > 0):
            raise DomainError(f"Nakagami shape m must be positive, got {self.m}")
        if not (np.isfinite(self.omega) and self.omega > 0):
            raise DomainError(f"Nakagami scale omega must be positive, got {self.omega}")


def _as_mask(mask: Optional[np.ndarray], shape: Tuple[int, ...], name: str) -> Optional[np.ndarray]:
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise DomainError(f"{name} shape {mask.shape} does not match data shape {shape}")
    return mask


@dataclass
class EnvelopeImage:
    """2-D grid of nonnegative envelope samples, optionally carrying an ROI mask."""
    data: np.ndarray
    roi: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.size == 0:
            raise DomainError(f"Envelope image must be a non-empty 2-D grid, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)) or np.any(self.data < 0):
            raise DomainError("Envelope samples must be finite and nonnegative")
        self.roi = _as_mask(self.roi, self.data.shape, "ROI mask")

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)


@dataclass
class ParamMap:
    """Per-pixel m estimates with a validity mask.

    Invalid pixels hold NaN. ``clamped`` flags estimates that were pulled back into the
    clamp range; they stay valid.
    """
    values: np.ndarray
    valid: np.ndarray
    clamped: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.values = np.array(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.size == 0:
            raise DomainError(f"Parameter map must be a non-empty 2-D grid, got shape {self.values.shape}")
        self.valid = _as_mask(self.valid, self.values.shape, "validity mask")
        self.valid = self.valid & np.isfinite(self.values)
        self.values[~self.valid] = np.nan
        if self.clamped is None:
            self.clamped = np.zeros(self.values.shape, dtype=bool)
        else:
            self.clamped = _as_mask(self.clamped, self.values.shape, "clamp flags") & self.valid

    @classmethod
    def from_values(cls, values: np.ndarray) -> "ParamMap":
        values = np.asarray(values, dtype=np.float64)
        return cls(values=values, valid=np.isfinite(values))

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    @property
    def valid_fraction(self) -> float:
        return float(np.count_nonzero(self.valid)) / self.values.size


@dataclass
class GroundTruthMap(ParamMap):
    """Ground-truth m map; every pixel valid and within [0.5, 2.0]."""
    roi: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        super().__post_init__()
        lo, hi = GROUND_TRUTH_M_RANGE
        if not np.all(self.valid):
            raise DomainError("Ground-truth maps cannot contain invalid pixels")
        if np.any(self.values < lo) or np.any(self.values > hi):
            raise DomainError(f"Ground-truth m values must lie within [{lo}, {hi}]")
        self.roi = _as_mask(self.roi, self.values.shape, "ROI mask")

    @classmethod
    def from_values(cls, values: np.ndarray, roi: Optional[np.ndarray] = None) -> "GroundTruthMap":
        values = np.asarray(values, dtype=np.float64)
        return cls(values=values, valid=np.ones(values.shape, dtype=bool), roi=roi)


@dataclass
class MetricReport:
    """One report row: an estimator scored against ground truth"""
    method: str
    window: str
    psnr_db: float
    rmse: float
    valid_fraction: float
    data_range: float
    psnr_infinite: bool = False


@dataclass
class RoiStats:
    """Distribution of m inside a region of interest"""
    label: str
    count: int
    mean: float
    std: float
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    bin_edges: np.ndarray
    counts: np.ndarray
    regime_fractions: Dict[Regime, float]


@dataclass
class RunManifest:
    command: str
    config: Dict[str, Any]
    artifacts: Dict[str, str]
    tool_version: str
    started_at: str
    elapsed_seconds: float
    notes: List[str] = field(default_factory=list)

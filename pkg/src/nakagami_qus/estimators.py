"""
Classical sliding-window Nakagami imaging: moment estimator, maximum-likelihood
estimator and window-modulated compounding.

Window statistics are evaluated by a shared vectorized core so the scalar window
functions and the full-image maps agree bit for bit.
"""

import logging
from typing import Literal, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import ArrayLike
from scipy.ndimage import map_coordinates

from .config import EstimateSection, WindowSpec
from .errors import ConfigurationError, DegenerateWindowError, DomainError
from .interfaces import EstimatorInterface
from .models import DEFAULT_CLAMP, EnvelopeImage, ParamMap
from .registry import registry
from . import score_estimator  # noqa: F401  registers the score-function estimator

logger = logging.getLogger(__name__)

Axis = Tuple[int, ...]
WindowEstimator = Literal["moment", "ml"]

# A window whose second central moment of r^2 is this small relative to mean(r^2)^2
# has no spread in double precision.
_DEGENERATE_RELATIVE_VARIANCE = 1e-20
_DEGENERATE_LOG_GAP = 1e-12
_ML_ZERO_CLAMP = 1e-6
_NEWTON_MAX_STEPS = 20
_NEWTON_RTOL = 1e-10

# numpy pad modes for each window padding policy; "reflect" repeats the edge sample
PAD_MODES = {"reflect": "symmetric", "replicate": "edge"}


def digamma(x: ArrayLike) -> np.ndarray:
    """psi(x) for x > 0: recurrence up to x >= 6, then the asymptotic series."""
    x = np.array(x, dtype=np.float64)
    if np.any(~(x > 0)):
        raise DomainError("digamma is evaluated only for positive arguments")
    shift = np.zeros_like(x)
    small = x < 6.0
    while np.any(small):
        shift[small] -= 1.0 / x[small]
        x[small] += 1.0
        small = x < 6.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv2 * (1 / 12 - inv2 * (1 / 120 - inv2 * (1 / 252 - inv2 * (
        1 / 240 - inv2 * (1 / 132 - inv2 * (691 / 32760 - inv2 / 12))))))
    return np.log(x) - 0.5 * inv - series + shift


def trigamma(x: ArrayLike) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    if np.any(~(x > 0)):
        raise DomainError("trigamma is evaluated only for positive arguments")
    shift = np.zeros_like(x)
    small = x < 6.0
    while np.any(small):
        shift[small] += 1.0 / x[small] ** 2
        x[small] += 1.0
        small = x < 6.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv2 * inv * (1 / 6 - inv2 * (1 / 30 - inv2 * (1 / 42 - inv2 * (
        1 / 30 - inv2 * (5 / 66 - inv2 * (691 / 2730 - inv2 * 7 / 6))))))
    return inv + 0.5 * inv2 + series + shift


def _moment_shape(windows: np.ndarray, axis: Axis) -> np.ndarray:
    """(mean r^2)^2 / biased central second moment of r^2; NaN where degenerate."""
    r2 = windows**2
    mean = r2.mean(axis=axis, keepdims=True)
    central = ((r2 - mean) ** 2).mean(axis=axis)
    mean = np.squeeze(mean, axis=axis)
    ok = (mean > 0) & (central > _DEGENERATE_RELATIVE_VARIANCE * mean**2)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(ok, mean**2 / np.where(ok, central, 1.0), np.nan)


def _greenwood_durand(delta: np.ndarray) -> np.ndarray:
    low = (0.5000876 + 0.1648852 * delta - 0.0544274 * delta**2) / delta
    high = (8.898919 + 9.059950 * delta + 0.9775373 * delta**2) / (
        delta * (17.79728 + 11.968477 * delta + delta**2)
    )
    return np.where(delta <= 0.5772, low, high)


def _ml_shape(windows: np.ndarray, axis: Axis) -> np.ndarray:
    """Gamma-shape ML for r^2 (profile likelihood at omega = mean r^2); NaN where degenerate."""
    r2 = windows**2
    mean_raw = r2.mean(axis=axis, keepdims=True)
    # r_min = 1e-6 sqrt(mean r^2)  <=>  r^2_min = 1e-12 mean r^2
    r2 = np.maximum(r2, (_ML_ZERO_CLAMP**2) * mean_raw)
    mean = r2.mean(axis=axis)
    ok = mean > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.log(np.where(ok, mean, 1.0)) - np.log(np.where(r2 > 0, r2, 1.0)).mean(axis=axis)
    ok &= delta > _DEGENERATE_LOG_GAP
    delta = np.where(ok, delta, 1.0)

    m = _greenwood_durand(delta)
    for _ in range(_NEWTON_MAX_STEPS):
        f = np.log(m) - digamma(m) - delta
        fp = 1.0 / m - trigamma(m)
        m_next = m - f / fp
        m_next = np.where(m_next > 0, m_next, 0.5 * m)
        done = np.abs(m_next - m) <= _NEWTON_RTOL * m_next
        m = m_next
        if np.all(done):
            break
    return np.where(ok, m, np.nan)


_CORES = {"moment": _moment_shape, "ml": _ml_shape}


def _window_samples(samples: ArrayLike) -> np.ndarray:
    arr = np.asarray(samples, dtype=np.float64).ravel()
    if arr.size < 2:
        raise DomainError(f"A window needs at least 2 samples, got {arr.size}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise DomainError("Envelope samples must be finite and nonnegative")
    return arr


def moment_estimate_window(samples: ArrayLike) -> float:
    arr = _window_samples(samples)
    m = float(_moment_shape(arr, axis=(0,)))
    if np.isnan(m):
        raise DegenerateWindowError("Window has zero variance of r^2", {"samples": int(arr.size)})
    return m


def ml_estimate_window(samples: ArrayLike) -> float:
    arr = _window_samples(samples)
    m = float(_ml_shape(arr, axis=(0,)))
    if np.isnan(m):
        raise DegenerateWindowError(
            "Window is numerically constant (log-moment gap <= 0)", {"samples": int(arr.size)}
        )
    return m


def _clamp_map(values: np.ndarray, valid: np.ndarray, clamp: Tuple[float, float]) -> ParamMap:
    lo, hi = clamp
    clamped = valid & ((values < lo) | (values > hi))
    values = np.where(valid, np.clip(values, lo, hi), np.nan)
    if np.any(clamped):
        logger.debug(f"Clamped {int(clamped.sum())} estimates into [{lo}, {hi}]")
    return ParamMap(values=values, valid=valid, clamped=clamped)


def _interpolate_grid(grid: np.ndarray, offset: int, stride: int, shape: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    """Bilinear fill of a strided estimate grid; a pixel is valid only if every
    grid point it draws weight from is valid."""
    h, w = shape
    grid_valid = np.isfinite(grid)
    if grid.size == 1:
        return np.full(shape, grid.flat[0]), np.full(shape, bool(grid_valid.flat[0]))

    rows = (np.arange(h, dtype=np.float64) - offset) / stride
    cols = (np.arange(w, dtype=np.float64) - offset) / stride
    coords = np.stack(np.meshgrid(rows, cols, indexing="ij"))
    weight = map_coordinates(grid_valid.astype(np.float64), coords, order=1, mode="nearest")
    total = map_coordinates(np.where(grid_valid, grid, 0.0), coords, order=1, mode="nearest")
    valid = weight >= 1.0 - 1e-9
    values = np.where(valid, total / np.where(valid, weight, 1.0), np.nan)
    return values, valid


def sliding_window_map(
    image: EnvelopeImage,
    window: WindowSpec,
    estimator: WindowEstimator = "moment",
    clamp: Tuple[float, float] = DEFAULT_CLAMP,
) -> ParamMap:
    """Evaluate a window estimator centered on every ``stride``-th pixel.

    Centers start at (stride - 1) // 2 so a single window covering the whole image
    sits at its center. Strided grids are filled back to full resolution by bilinear
    interpolation (nearest beyond the outermost centers).
    """
    if estimator not in _CORES:
        raise ConfigurationError(f"Unknown window estimator '{estimator}'", {"allowed": sorted(_CORES)})
    h, w = image.shape
    size, stride = window.size, window.stride
    if size > min(h, w):
        raise ConfigurationError(
            f"Window size {size} exceeds image dimensions {h}x{w}",
            {"field": "window.size", "size": size, "height": h, "width": w},
        )

    pad = size // 2
    padded = np.pad(image.data, pad, mode=PAD_MODES[window.padding])
    views = sliding_window_view(padded, (size, size))
    offset = (stride - 1) // 2
    rows = np.arange(offset, h, stride)
    cols = np.arange(offset, w, stride)

    core = _CORES[estimator]
    grid = np.empty((rows.size, cols.size))
    for ri, i in enumerate(rows):
        grid[ri] = core(views[i, cols], axis=(-2, -1))

    if stride == 1:
        values, valid = grid, np.isfinite(grid)
    else:
        values, valid = _interpolate_grid(grid, offset, stride, (h, w))

    degenerate = int(np.count_nonzero(~np.isfinite(grid)))
    if degenerate:
        logger.warning(f"{degenerate} of {grid.size} {estimator} windows were degenerate")
    return _clamp_map(values, valid, clamp)


def wmc_map(
    image: EnvelopeImage,
    sizes: Sequence[int],
    padding: str = "reflect",
    clamp: Tuple[float, float] = DEFAULT_CLAMP,
) -> ParamMap:
    """Window-modulated compounding: mean of stride-1 moment maps over several sizes."""
    sizes = list(sizes)
    if not sizes or len(set(sizes)) != len(sizes):
        raise ConfigurationError("WMC needs a non-empty list of distinct window sizes", {"sizes": sizes})

    maps = [
        sliding_window_map(image, WindowSpec(size=s, stride=1, padding=padding), "moment", clamp)
        for s in sizes
    ]
    valid = np.logical_and.reduce([pm.valid for pm in maps])
    stacked = np.stack([pm.values for pm in maps])
    with np.errstate(invalid="ignore"):
        values = np.where(valid, stacked.mean(axis=0), np.nan)
    clamped = np.logical_or.reduce([pm.clamped for pm in maps]) & valid
    return ParamMap(values=values, valid=valid, clamped=clamped)


class MomentEstimator(EstimatorInterface):
    """Sliding-window moment estimator."""
    registration_key = "moment"

    def estimate(self, image: EnvelopeImage) -> ParamMap:
        return sliding_window_map(image, self.settings.window, "moment", self.settings.clamp)

    def describe(self) -> str:
        return self.settings.window.describe()


class MLEstimator(EstimatorInterface):
    """Sliding-window maximum-likelihood estimator."""
    registration_key = "ml"

    def estimate(self, image: EnvelopeImage) -> ParamMap:
        return sliding_window_map(image, self.settings.window, "ml", self.settings.clamp)

    def describe(self) -> str:
        return self.settings.window.describe()


class WMCEstimator(EstimatorInterface):
    """Window-modulated compounding of moment maps."""
    registration_key = "wmc"

    def estimate(self, image: EnvelopeImage) -> ParamMap:
        return wmc_map(image, self.settings.sizes, self.settings.window.padding, self.settings.clamp)

    def describe(self) -> str:
        return ",".join(str(s) for s in self.settings.sizes)


class MeasurementEstimator(EstimatorInterface):
    """The raw envelope scored as if it were an m map (the do-nothing baseline)."""
    registration_key = "measurement"

    def estimate(self, image: EnvelopeImage) -> ParamMap:
        return ParamMap.from_values(image.data)

    def describe(self) -> str:
        return "-"


def create_estimator(settings: EstimateSection, network: Optional[object] = None) -> EstimatorInterface:
    """Factory function to create estimator instances using the registry."""
    method = settings.method.value
    try:
        estimator_class = registry.get_estimator_class(method)
    except ValueError:
        raise ConfigurationError(
            f"No estimator registered for method '{method}'",
            {"field": "estimate.method", "allowed": registry.methods()},
        )
    return estimator_class(settings, network)

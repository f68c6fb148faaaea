"""
Closed-form per-pixel Nakagami estimate from a score image.

For an envelope value r with score s = d/dr log p(r) and scale omega, the shape is

    m = (1/r + s) / (2/r - 2r/omega)

exactly, with no approximation. The quotient is undefined on the locus r^2 = omega;
those pixels are marked invalid and, when a low-pass filter is configured, refilled
from their valid neighbours.
"""

import logging
import warnings
from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import uniform_filter

from .config import FilterSpec, OmegaMode, UnicornConfig
from .errors import ConfigurationError, DegenerateWindowError, DomainError, SingularPixelError
from .interfaces import EstimatorInterface
from .models import EnvelopeImage, ParamMap, ScoreImage
from .score_model import forward

logger = logging.getLogger(__name__)

R_MIN_FACTOR = 1e-6
# Rows of windows reduced per nanmedian call; bounds the temporary window stack.
_FILTER_ROW_BLOCK = 64


def _singular(r: np.ndarray, omega_hat: np.ndarray, denominator_epsilon: float) -> np.ndarray:
    return np.abs(1.0 - r**2 / omega_hat) < denominator_epsilon


def _quotient(r: np.ndarray, score: np.ndarray, omega_hat: np.ndarray) -> np.ndarray:
    inv_r = 1.0 / r
    return (inv_r + score) / (2.0 * inv_r - 2.0 * r / omega_hat)


def pointwise_m(r: float, score: float, omega_hat: float, denominator_epsilon: float = 1e-3) -> float:
    """Unclamped per-pixel estimate; raises SingularPixelError near r = sqrt(omega_hat)."""
    if not r > 0:
        raise DomainError(f"pointwise_m requires r > 0, got {r}")
    if not omega_hat > 0:
        raise DomainError(f"pointwise_m requires omega_hat > 0, got {omega_hat}")
    if _singular(np.float64(r), np.float64(omega_hat), denominator_epsilon):
        raise SingularPixelError(
            "Denominator vanishes at r close to sqrt(omega_hat)",
            {"r": r, "omega_hat": omega_hat, "denominator_epsilon": denominator_epsilon},
        )
    return float(_quotient(np.float64(r), np.float64(score), np.float64(omega_hat)))


def estimate_omega(image: EnvelopeImage, mode: OmegaMode) -> np.ndarray:
    """Per-pixel omega_hat = E[R^2]: whole image, reflect-padded k x k mean, or a constant."""
    r2 = image.data**2
    global_mean = float(r2.mean())
    if not global_mean > 0:
        raise DegenerateWindowError("Cannot estimate omega from an all-zero image")

    if mode.kind == "fixed":
        return np.full(image.shape, float(mode.value))
    if mode.kind == "local":
        omega = uniform_filter(r2, size=mode.window, mode="reflect")
        # An all-zero neighbourhood falls back to the image-wide second moment
        return np.where(omega > 0, omega, global_mean)
    return np.full(image.shape, global_mean)


def _windowed(values: np.ndarray, size: int) -> np.ndarray:
    pad = size // 2
    return sliding_window_view(np.pad(values, pad, mode="symmetric"), (size, size))


def _lower_median(windows: np.ndarray, axis: Tuple[int, int]) -> np.ndarray:
    # an even count of valid values keeps the lower middle one, never a midpoint
    return np.nanpercentile(windows, 50, axis=axis, method="lower")


def lowpass(param_map: ParamMap, spec: FilterSpec) -> ParamMap:
    """Median or mean of the valid values in each reflect-padded k x k window.

    The median of an even number of valid values is the lower of the middle two, so every
    filtered value is one of the window's own estimates.
    """
    if spec.kind == "none":
        return param_map
    h, w = param_map.shape
    if spec.size > min(h, w):
        raise ConfigurationError(
            f"Filter size {spec.size} exceeds map dimensions {h}x{w}", {"field": "filter.size"}
        )

    views = _windowed(param_map.values, spec.size)
    reduce = _lower_median if spec.kind == "median" else np.nanmean
    out = np.empty((h, w))
    with warnings.catch_warnings():
        # windows with no valid value produce NaN and stay invalid
        warnings.simplefilter("ignore", category=RuntimeWarning)
        for start in range(0, h, _FILTER_ROW_BLOCK):
            stop = min(start + _FILTER_ROW_BLOCK, h)
            out[start:stop] = reduce(views[start:stop], axis=(-2, -1))

    return ParamMap(values=out, valid=np.isfinite(out), clamped=param_map.clamped)


def unicorn_map(image: EnvelopeImage, scores: ScoreImage, config: UnicornConfig) -> ParamMap:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != image.shape:
        raise ConfigurationError(
            f"Score image shape {scores.shape} does not match envelope shape {image.shape}"
        )

    omega_hat = estimate_omega(image, config.omega_mode)
    r_min = R_MIN_FACTOR * np.sqrt(np.mean(image.data**2))
    r = np.maximum(image.data, r_min)

    singular = _singular(r, omega_hat, config.denominator_epsilon)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        raw = _quotient(r, scores, omega_hat)
    valid = ~singular & np.isfinite(raw)
    if np.any(singular):
        logger.warning(f"{int(singular.sum())} singular pixels marked invalid")

    lo, hi = config.clamp
    clamped = valid & ((raw < lo) | (raw > hi))
    values = np.where(valid, np.clip(raw, lo, hi), np.nan)
    estimate = ParamMap(values=values, valid=valid, clamped=clamped)
    return lowpass(estimate, config.filter)


class ScoreEstimator(EstimatorInterface):
    """Score-function estimator driven by a trained score network."""
    registration_key = "unicorn"

    def scores(self, image: EnvelopeImage) -> np.ndarray:
        if self.network is None:
            raise ConfigurationError(
                "The unicorn method needs a trained score network checkpoint",
                {"field": "estimate.checkpoint"},
            )
        return forward(self.network, image)

    def estimate(self, image: EnvelopeImage) -> ParamMap:
        return unicorn_map(image, self.scores(image), self.settings.unicorn)

    def describe(self) -> str:
        return self.settings.unicorn.filter.describe()


def score_and_estimate(estimator: ScoreEstimator, image: EnvelopeImage) -> Tuple[np.ndarray, ParamMap]:
    """Return the raw score image together with the estimate built from it."""
    scores = estimator.scores(image)
    return scores, unicorn_map(image, scores, estimator.settings.unicorn)

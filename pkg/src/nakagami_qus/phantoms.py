"""Procedural grayscale phantoms used as ground-truth sources."""

from typing import Callable, Dict, Tuple

import numpy as np

from .errors import ConfigurationError, DomainError
from .models import GROUND_TRUTH_M_RANGE

IntensityGenerator = Callable[[int, int, np.random.Generator], np.ndarray]

# Seven-segment layout on a unit box: (row0, col0, row1, col1) per segment.
_SEGMENTS = {
    "a": (0.0, 0.0, 0.0, 1.0),
    "b": (0.0, 1.0, 0.5, 1.0),
    "c": (0.5, 1.0, 1.0, 1.0),
    "d": (1.0, 0.0, 1.0, 1.0),
    "e": (0.5, 0.0, 1.0, 0.0),
    "f": (0.0, 0.0, 0.5, 0.0),
    "g": (0.5, 0.0, 0.5, 1.0),
}
_DIGITS = {
    0: "abcdef", 1: "bc", 2: "abged", 3: "abgcd", 4: "fgbc",
    5: "afgcd", 6: "afgedc", 7: "abc", 8: "abcdefg", 9: "abcdfg",
}


def _grid(height: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
    return np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing="ij")


def ramp(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """Linear gradient from 0 to 1 along a random axis or diagonal."""
    rows, cols = _grid(height, width)
    direction = rng.integers(4)
    span_r = max(height - 1, 1)
    span_c = max(width - 1, 1)
    if direction == 0:
        out = cols / span_c
    elif direction == 1:
        out = rows / span_r
    elif direction == 2:
        out = 0.5 * (rows / span_r + cols / span_c)
    else:
        out = 1.0 - cols / span_c
    return np.clip(out, 0.0, 1.0)


def disk_mask(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    rows, cols = _grid(height, width)
    radius = rng.uniform(0.15, 0.3) * min(height, width)
    cy = rng.uniform(radius, max(height - radius, radius))
    cx = rng.uniform(radius, max(width - radius, radius))
    return (rows - cy) ** 2 + (cols - cx) ** 2 <= radius**2


def disk(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """Disk of one intensity on a background of another."""
    inside, outside = rng.uniform(0.0, 1.0, size=2)
    return np.where(disk_mask(height, width, rng), inside, outside)


def checkerboard(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    tile = int(rng.choice([4, 8]))
    low, high = np.sort(rng.uniform(0.0, 1.0, size=2))
    rows, cols = _grid(height, width)
    parity = ((rows // tile) + (cols // tile)) % 2
    return np.where(parity == 0, low, high)


def strokes(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """A random digit drawn as seven-segment strokes, bright on a dark background."""
    digit = int(rng.integers(10))
    rows, cols = _grid(height, width)
    top, left = 0.15 * height, 0.3 * width
    box_h, box_w = 0.7 * height, 0.4 * width
    thickness = max(1.0, 0.06 * min(height, width))

    out = np.zeros((height, width))
    for name in _DIGITS[digit]:
        r0, c0, r1, c1 = _SEGMENTS[name]
        r0, r1 = top + r0 * box_h, top + r1 * box_h
        c0, c1 = left + c0 * box_w, left + c1 * box_w
        inside = (
            (rows >= min(r0, r1) - thickness)
            & (rows <= max(r0, r1) + thickness)
            & (cols >= min(c0, c1) - thickness)
            & (cols <= max(c0, c1) + thickness)
        )
        out[inside] = 1.0
    return out


GENERATORS: Dict[str, IntensityGenerator] = {
    "ramp": ramp,
    "disk": disk,
    "checkerboard": checkerboard,
    "strokes": strokes,
}


def generate_intensities(name: str, height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    try:
        generator = GENERATORS[name]
    except KeyError:
        raise ConfigurationError(
            f"Unknown phantom generator '{name}'",
            {"field": "dataset.generators", "allowed": sorted(GENERATORS) + ["lesion"]},
        )
    return generator(height, width, rng)


def lesion(
    height: int, width: int, lesion_m: float, background_m: float, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """m map of a disk lesion inside a uniform background, and the lesion mask as ROI."""
    lo, hi = GROUND_TRUTH_M_RANGE
    for value in (lesion_m, background_m):
        if not lo <= value <= hi:
            raise DomainError(f"Phantom m value {value} lies outside [{lo}, {hi}]")
    roi = disk_mask(height, width, rng)
    return np.where(roi, lesion_m, background_m), roi

"""Synthetic experiment data: ground-truth m maps, Nakagami measurements and splits."""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple, TypeVar

import numpy as np
from numpy.typing import ArrayLike

from .config import DatasetSection
from .errors import ConfigurationError, DomainError
from .formats import read_pgm
from .models import GROUND_TRUTH_M_RANGE, EnvelopeImage, GroundTruthMap
from .nakagami import sample_field
from .phantoms import generate_intensities, lesion

logger = logging.getLogger(__name__)

T = TypeVar("T")
Pair = Tuple[GroundTruthMap, EnvelopeImage]


def normalize_to_m(intensities: ArrayLike) -> GroundTruthMap:
    """m = 0.5 + 1.5 * intensity, elementwise; intensities must lie in [0, 1]."""
    values = np.asarray(intensities, dtype=np.float64)
    if values.ndim != 2:
        raise DomainError(f"Intensity image must be 2-D, got shape {values.shape}")
    if not np.all(np.isfinite(values)) or values.min() < 0.0 or values.max() > 1.0:
        raise DomainError("Intensities must lie within [0, 1]")
    lo, hi = GROUND_TRUTH_M_RANGE
    return GroundTruthMap.from_values(lo + (hi - lo) * values)


def m_to_intensity(m: ArrayLike) -> np.ndarray:
    lo, hi = GROUND_TRUTH_M_RANGE
    return (np.asarray(m, dtype=np.float64) - lo) / (hi - lo)


def synthesize_measurement(truth: GroundTruthMap, omega: float, rng: np.random.Generator) -> EnvelopeImage:
    """Independent Nakagami(m = truth pixel, omega) draw per pixel; the ROI carries over."""
    return EnvelopeImage(data=sample_field(truth.values, omega, rng), roi=truth.roi)


@dataclass
class Dataset:
    train: List[Pair] = field(default_factory=list)
    test: List[Pair] = field(default_factory=list)
    split_seed: int = 0


def split_indices(count: int, train_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    if count < 2:
        raise ConfigurationError(f"Splitting needs at least 2 items, got {count}")
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError(
            f"train_fraction must lie in (0, 1), got {train_fraction}", {"field": "dataset.train_fraction"}
        )
    # round first so 0.8 * 10 does not become 9 through 8.000000000000002
    n_train = math.ceil(round(train_fraction * count, 9))
    if n_train >= count:
        raise ConfigurationError(
            f"train_fraction {train_fraction} leaves the test split empty for {count} items",
            {"field": "dataset.train_fraction"},
        )
    order = np.random.default_rng(seed).permutation(count)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def split_dataset(items: Sequence[T], train_fraction: float, seed: int) -> Dataset:
    train_idx, test_idx = split_indices(len(items), train_fraction, seed)
    return Dataset(
        train=[items[i] for i in train_idx],
        test=[items[i] for i in test_idx],
        split_seed=seed,
    )


def load_pgm_truths(source_dir: Path) -> List[GroundTruthMap]:
    paths = sorted(Path(source_dir).glob("*.pgm"))
    if not paths:
        raise ConfigurationError(f"No .pgm images found in {source_dir}", {"field": "dataset.source_dir"})
    return [normalize_to_m(read_pgm(path).intensities) for path in paths]


def build_truths(section: DatasetSection) -> List[GroundTruthMap]:
    """Ground-truth maps from a PGM directory or the configured procedural generators.

    Generators are used round-robin so every configured kind appears in the set.
    """
    if section.source_dir is not None:
        truths = load_pgm_truths(section.source_dir)
        logger.info(f"Loaded {len(truths)} ground-truth maps from {section.source_dir}")
        return truths

    rng = np.random.default_rng(section.seed)
    truths = []
    for index in range(section.count):
        name = section.generators[index % len(section.generators)]
        if name == "lesion":
            values, roi = lesion(section.height, section.width, section.lesion_m, section.background_m, rng)
            truths.append(GroundTruthMap.from_values(values, roi=roi))
        else:
            truths.append(normalize_to_m(generate_intensities(name, section.height, section.width, rng)))
    logger.info(f"Generated {len(truths)} ground-truth maps ({', '.join(section.generators)})")
    return truths


def synthesize_pairs(truths: Sequence[GroundTruthMap], omega: float, seed: int) -> List[Pair]:
    """One fixed measurement per ground-truth map, drawn in order from a single generator."""
    rng = np.random.default_rng(seed)
    return [(truth, synthesize_measurement(truth, omega, rng)) for truth in truths]

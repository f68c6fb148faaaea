"""
Evaluation against ground truth (RMSE, PSNR) and region-of-interest statistics, with
CSV emission for report tables.
"""

import logging
import math
from dataclasses import asdict
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import ConfigurationError, EvaluationError
from .formats import atomic_write
from .models import MetricReport, ParamMap, Regime, RoiStats
from .nakagami import regime_labels

logger = logging.getLogger(__name__)

DEFAULT_DATA_RANGE = 1.5
FLOAT_FORMAT = "%.17g"


def _squared_errors(estimate: ParamMap, truth: ParamMap) -> np.ndarray:
    if estimate.shape != truth.shape:
        raise ConfigurationError(
            f"Estimate shape {estimate.shape} does not match ground truth shape {truth.shape}"
        )
    both = estimate.valid & truth.valid
    return (estimate.values[both] - truth.values[both]) ** 2


def _rmse_from(squared: np.ndarray) -> float:
    if squared.size == 0:
        raise EvaluationError("No mutually valid pixels to compare")
    return float(np.sqrt(squared.mean()))


def rmse(estimate: ParamMap, truth: ParamMap) -> float:
    """Root mean squared difference over mutually valid pixels."""
    return _rmse_from(_squared_errors(estimate, truth))


def psnr_from_rmse(error: float, data_range: float = DEFAULT_DATA_RANGE) -> float:
    if not data_range > 0:
        raise ConfigurationError(f"data_range must be positive, got {data_range}", {"field": "evaluate.data_range"})
    if error == 0.0:
        return math.inf
    return 20.0 * math.log10(data_range / error)


def psnr(estimate: ParamMap, truth: ParamMap, data_range: float = DEFAULT_DATA_RANGE) -> float:
    """20 log10(data_range / rmse) in dB; infinite when the maps agree exactly."""
    return psnr_from_rmse(rmse(estimate, truth), data_range)


def evaluate(
    estimates: Sequence[ParamMap],
    truths: Sequence[ParamMap],
    method: str,
    window: str,
    data_range: float = DEFAULT_DATA_RANGE,
) -> MetricReport:
    """Score a set of estimates; squared errors are pooled over every image before the root."""
    if len(estimates) != len(truths) or not estimates:
        raise EvaluationError(
            f"Need matching, non-empty estimate and truth lists ({len(estimates)} vs {len(truths)})"
        )
    squared = np.concatenate([_squared_errors(e, t) for e, t in zip(estimates, truths)])
    error = _rmse_from(squared)
    value = psnr_from_rmse(error, data_range)
    total = sum(e.values.size for e in estimates)
    valid = sum(int(np.count_nonzero(e.valid)) for e in estimates)
    return MetricReport(
        method=method,
        window=window,
        psnr_db=value,
        rmse=error,
        valid_fraction=valid / total,
        data_range=data_range,
        psnr_infinite=math.isinf(value),
    )


def roi_stats(
    param_map: ParamMap,
    roi: np.ndarray,
    bins: int = 50,
    value_range: Tuple[float, float] = (0.0, 3.0),
    label: str = "",
) -> RoiStats:
    """Distribution of valid map values inside ``roi``.

    Values outside ``value_range`` are counted in the edge bins. The standard deviation
    is the population (1/N) one.
    """
    roi = np.asarray(roi, dtype=bool)
    if roi.shape != param_map.shape:
        raise ConfigurationError(f"ROI shape {roi.shape} does not match map shape {param_map.shape}")
    values = param_map.values[roi & param_map.valid]
    if values.size < 2:
        raise EvaluationError(f"ROI holds {values.size} valid pixels; at least 2 are needed", {"label": label})

    lo, hi = value_range
    counts, edges = np.histogram(np.clip(values, lo, hi), bins=bins, range=(lo, hi))
    labels = regime_labels(values)
    fractions = {regime: float(np.count_nonzero(labels == i)) / values.size for i, regime in enumerate(Regime)}
    q1, median, q3 = np.percentile(values, [25, 50, 75])
    return RoiStats(
        label=label,
        count=int(values.size),
        mean=float(values.mean()),
        std=float(values.std()),
        minimum=float(values.min()),
        q1=float(q1),
        median=float(median),
        q3=float(q3),
        maximum=float(values.max()),
        bin_edges=edges,
        counts=counts,
        regime_fractions=fractions,
    )


def pooled_roi_stats(
    maps: Sequence[ParamMap],
    rois: Sequence[np.ndarray],
    bins: int = 50,
    value_range: Tuple[float, float] = (0.0, 3.0),
    label: str = "",
) -> RoiStats:
    """roi_stats over the ROI pixels of several maps taken together."""
    if not maps or len(maps) != len(rois):
        raise EvaluationError("Need matching, non-empty map and ROI lists")
    masks = [np.asarray(r, dtype=bool) for r in rois]
    for m, mask in zip(maps, masks):
        if mask.shape != m.shape:
            raise ConfigurationError(f"ROI shape {mask.shape} does not match map shape {m.shape}")
    values = np.concatenate([m.values[mask & m.valid] for m, mask in zip(maps, masks)])
    if values.size < 2:
        raise EvaluationError(f"Pooled ROIs hold {values.size} valid pixels; at least 2 are needed", {"label": label})
    flat = ParamMap.from_values(values.reshape(1, -1))
    return roi_stats(flat, np.ones(flat.shape, dtype=bool), bins, value_range, label)


def write_frame(frame: pd.DataFrame, path: Union[str, Path]) -> None:
    text = frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    atomic_write(path, text.encode("utf-8"))
    logger.info(f"Wrote {len(frame)} rows to {path}")


def reports_frame(reports: Sequence[MetricReport]) -> pd.DataFrame:
    frame = pd.DataFrame([asdict(r) for r in reports])
    return frame.sort_values(["method", "window"], kind="mergesort").reset_index(drop=True)


def emit_csv(reports: Sequence[MetricReport], path: Union[str, Path]) -> None:
    """Header plus one row per report, ordered by method then window."""
    if not reports:
        raise EvaluationError("No metric reports to write")
    write_frame(reports_frame(reports), path)


def stats_frame(stats: Sequence[RoiStats]) -> pd.DataFrame:
    rows = []
    for s in stats:
        row = {
            "label": s.label,
            "count": s.count,
            "mean": s.mean,
            "std": s.std,
            "min": s.minimum,
            "q1": s.q1,
            "median": s.median,
            "q3": s.q3,
            "max": s.maximum,
        }
        row.update({f"fraction_{regime.value}": share for regime, share in s.regime_fractions.items()})
        rows.append(row)
    return pd.DataFrame(rows).sort_values("label", kind="mergesort").reset_index(drop=True)


def emit_stats_csv(stats: Sequence[RoiStats], path: Union[str, Path]) -> None:
    if not stats:
        raise EvaluationError("No ROI statistics to write")
    write_frame(stats_frame(stats), path)


def emit_histogram_csv(stats: Sequence[RoiStats], path: Union[str, Path]) -> None:
    """Long-format histogram dump: one row per (label, bin)."""
    if not stats:
        raise EvaluationError("No ROI statistics to write")
    rows: List[dict] = []
    for s in sorted(stats, key=lambda item: item.label):
        for lo, hi, count in zip(s.bin_edges[:-1], s.bin_edges[1:], s.counts):
            rows.append({"label": s.label, "bin_low": float(lo), "bin_high": float(hi), "count": int(count)})
    write_frame(pd.DataFrame(rows), path)


def best_report(reports: Sequence[MetricReport], method: Optional[str] = None) -> MetricReport:
    candidates = [r for r in reports if method is None or r.method == method]
    if not candidates:
        raise EvaluationError(f"No reports for method '{method}'")
    return max(candidates, key=lambda r: r.psnr_db)

"""
Experiment orchestration behind the command-line interface.

Directory layout of a run (``paths.output``):

    train/truth_0000.nkrf, train/measurement_0000.nkrf, ...
    test/truth_0000.nkrf,  test/measurement_0000.nkrf,  ...
    score_network.nksn, loss_history.csv
    estimates/<tag>/estimate_0000.nkrf, estimates/<tag>/estimate.json
    metrics.csv, roi_stats.csv, roi_histograms.csv
    manifest_<command>.json
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import EstimateSection, FilterSpec, RunConfig, WindowSpec
from .datasets import build_truths, split_dataset, synthesize_pairs
from .errors import ArtifactIOError, ConfigurationError
from .estimators import create_estimator
from .formats import (
    Raster,
    atomic_write,
    envelope_from_raster,
    param_map_from_raster,
    raster_from_envelope,
    raster_from_param_map,
    raster_from_truth,
    read_bytes,
    read_raster,
    truth_from_raster,
    write_raster,
)
from .manifest import ManifestRecorder
from .metrics import (
    best_report,
    emit_csv,
    emit_histogram_csv,
    emit_stats_csv,
    evaluate,
    pooled_roi_stats,
    write_frame,
)
from .models import EnvelopeImage, EstimatorMethod, GroundTruthMap, MetricReport, ParamMap, RoiStats
from .score_estimator import ScoreEstimator, score_and_estimate
from .score_model import ScoreNetwork, build_network, load_network
from .training import train

logger = logging.getLogger(__name__)

ESTIMATES_DIR = "estimates"
LOSS_HISTORY = "loss_history.csv"
METRICS_CSV = "metrics.csv"
ROI_STATS_CSV = "roi_stats.csv"
ROI_HISTOGRAM_CSV = "roi_histograms.csv"


@dataclass
class EstimateRun:
    """Estimates of one method over a split, with the labels used in report tables."""
    method: str
    window: str
    tag: str
    maps: List[ParamMap]


def estimate_tag(method: str, window: str) -> str:
    safe = window.replace(":", "").replace(",", "_").replace("/", "s")
    return f"{method}-{safe}"


class ExperimentRunner:
    """Runs simulate / train / estimate / evaluate / benchmark for one configuration."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.input_dir = Path(config.paths.input)
        self.output_dir = Path(config.paths.output)

    def _prepare_output(self) -> None:
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ArtifactIOError(
                f"Cannot create output directory {self.output_dir}: {e}", {"path": str(self.output_dir)}
            )

    # ------------------------------------------------------------ data

    def _split_files(self, root: Path, split: str, kind: str) -> List[Path]:
        files = sorted((root / split).glob(f"{kind}_*.nkrf"))
        if not files:
            raise ArtifactIOError(
                f"No {kind} files found in {root / split}; run simulate first", {"path": str(root / split)}
            )
        return files

    def load_measurements(self, root: Path, split: str) -> List[EnvelopeImage]:
        return [envelope_from_raster(read_raster(p)) for p in self._split_files(root, split, "measurement")]

    def load_truths(self, root: Path, split: str) -> List[GroundTruthMap]:
        return [truth_from_raster(read_raster(p)) for p in self._split_files(root, split, "truth")]

    def simulate(self, recorder: ManifestRecorder) -> Dict[str, int]:
        self._prepare_output()
        dataset_cfg = self.config.dataset
        truths = build_truths(dataset_cfg)
        pairs = synthesize_pairs(truths, self.config.simulate.omega, self.config.simulate.seed)
        dataset = split_dataset(pairs, dataset_cfg.train_fraction, dataset_cfg.seed)

        for split, items in (("train", dataset.train), ("test", dataset.test)):
            for index, (truth, measurement) in enumerate(items):
                truth_path = self.output_dir / split / f"truth_{index:04d}.nkrf"
                measurement_path = self.output_dir / split / f"measurement_{index:04d}.nkrf"
                write_raster(truth_path, raster_from_truth(truth))
                write_raster(measurement_path, raster_from_envelope(measurement))
                recorder.add(truth_path)
                recorder.add(measurement_path)

        recorder.note(f"omega={self.config.simulate.omega}")
        logger.info(f"Simulated {len(dataset.train)} train and {len(dataset.test)} test pairs")
        return {"train": len(dataset.train), "test": len(dataset.test)}

    # ------------------------------------------------------------ training

    def checkpoint_path(self) -> Path:
        return self.output_dir / self.config.train.checkpoint

    def train(self, recorder: ManifestRecorder) -> Path:
        self._prepare_output()
        section = self.config.train
        images = self.load_measurements(self.input_dir, "train")
        net = build_network(section.topology, seed=section.config.seed, precision=section.config.precision)
        checkpoint = self.checkpoint_path()
        result = train(net, images, section.config, section.schedule, checkpoint_path=checkpoint)

        history = pd.DataFrame(
            {
                "step": np.arange(len(result.loss_history)),
                "delta": result.deltas,
                "loss": result.loss_history,
                "residual": result.residual_history,
            }
        )
        loss_path = self.output_dir / LOSS_HISTORY
        write_frame(history, loss_path)
        recorder.add(checkpoint)
        recorder.add(loss_path)
        recorder.note(f"sigma_max={section.schedule.sigma_max} sigma_min={section.schedule.sigma_min}")
        recorder.note(f"total_steps={result.total_steps}")
        return checkpoint

    # ------------------------------------------------------------ estimation

    def _network_for(self, settings: EstimateSection) -> Optional[ScoreNetwork]:
        if settings.method != EstimatorMethod.UNICORN:
            return None
        if settings.checkpoint is None:
            raise ConfigurationError(
                "The unicorn method needs a score network checkpoint", {"field": "estimate.checkpoint"}
            )
        return load_network(settings.checkpoint, precision=self.config.train.config.precision)

    def run_estimator(
        self,
        settings: EstimateSection,
        images: Sequence[EnvelopeImage],
        label: Optional[str] = None,
        network: Optional[ScoreNetwork] = None,
        recorder: Optional[ManifestRecorder] = None,
    ) -> EstimateRun:
        """Estimate every image and write the maps under estimates/<tag>/."""
        if network is None:
            network = self._network_for(settings)
        estimator = create_estimator(settings, network)
        method = label or settings.method.value
        window = estimator.describe()
        tag = estimate_tag(method, window)
        folder = self.output_dir / ESTIMATES_DIR / tag

        maps = []
        for index, image in enumerate(images):
            if settings.write_scores and isinstance(estimator, ScoreEstimator):
                scores, estimate = score_and_estimate(estimator, image)
                score_path = folder / f"scores_{index:04d}.nkrf"
                write_raster(score_path, Raster(data=scores))
                if recorder is not None:
                    recorder.add(score_path)
            else:
                estimate = estimator.estimate(image)
            path = folder / f"estimate_{index:04d}.nkrf"
            write_raster(path, raster_from_param_map(estimate))
            maps.append(estimate)
            if recorder is not None:
                recorder.add(path)

        sidecar = folder / "estimate.json"
        atomic_write(sidecar, json.dumps({"method": method, "window": window}, sort_keys=True).encode("utf-8"))
        if recorder is not None:
            recorder.add(sidecar)
        logger.info(f"Estimated {len(maps)} maps with {method} ({window})")
        return EstimateRun(method=method, window=window, tag=tag, maps=maps)

    def estimate(self, recorder: ManifestRecorder) -> EstimateRun:
        self._prepare_output()
        settings = self.config.estimate
        images = self.load_measurements(self.input_dir, settings.split)
        return self.run_estimator(settings, images, recorder=recorder)

    # ------------------------------------------------------------ evaluation

    def load_estimate_runs(self, root: Path) -> List[EstimateRun]:
        runs = []
        for sidecar in sorted((root / ESTIMATES_DIR).glob("*/estimate.json")):
            labels = json.loads(read_bytes(sidecar).decode("utf-8"))
            files = sorted(sidecar.parent.glob("estimate_*.nkrf"))
            maps = [param_map_from_raster(read_raster(p)) for p in files]
            runs.append(EstimateRun(labels["method"], labels["window"], sidecar.parent.name, maps))
        if not runs:
            raise ArtifactIOError(f"No estimates found under {root / ESTIMATES_DIR}", {"path": str(root)})
        return runs

    def score_runs(
        self, runs: Sequence[EstimateRun], truths: Sequence[GroundTruthMap]
    ) -> Tuple[List[MetricReport], List[RoiStats]]:
        section = self.config.evaluate
        reports = [evaluate(run.maps, truths, run.method, run.window, section.data_range) for run in runs]

        stats: List[RoiStats] = []
        if all(t.roi is not None for t in truths):
            rois = [t.roi for t in truths]
            stats.append(pooled_roi_stats(truths, rois, section.bins, section.hist_range, label="truth"))
            for run in runs:
                label = f"{run.method} {run.window}"
                stats.append(pooled_roi_stats(run.maps, rois, section.bins, section.hist_range, label=label))
        return reports, stats

    def write_reports(
        self, reports: Sequence[MetricReport], stats: Sequence[RoiStats], recorder: ManifestRecorder
    ) -> None:
        metrics_path = self.output_dir / METRICS_CSV
        emit_csv(reports, metrics_path)
        recorder.add(metrics_path)
        if stats:
            stats_path = self.output_dir / ROI_STATS_CSV
            histogram_path = self.output_dir / ROI_HISTOGRAM_CSV
            emit_stats_csv(stats, stats_path)
            emit_histogram_csv(stats, histogram_path)
            recorder.add(stats_path)
            recorder.add(histogram_path)
        recorder.note(f"data_range={self.config.evaluate.data_range}")

    def evaluate(self, recorder: ManifestRecorder) -> List[MetricReport]:
        self._prepare_output()
        truths = self.load_truths(self.input_dir, self.config.estimate.split)
        runs = self.load_estimate_runs(self.input_dir)
        reports, stats = self.score_runs(runs, truths)
        self.write_reports(reports, stats, recorder)
        return reports

    # ------------------------------------------------------------ benchmark

    def benchmark(self, recorder: ManifestRecorder) -> List[MetricReport]:
        """Simulate, train when no checkpoint exists, run every method on the test split
        and write the report tables."""
        self._prepare_output()
        self.input_dir = self.output_dir
        self.simulate(recorder)
        checkpoint = self.checkpoint_path()
        if checkpoint.exists():
            recorder.add(checkpoint)
            recorder.note("reused existing score network checkpoint")
        else:
            self.train(recorder)
        network = load_network(checkpoint, precision=self.config.train.config.precision)

        images = self.load_measurements(self.output_dir, "test")
        truths = self.load_truths(self.output_dir, "test")
        base = self.config.estimate
        bench = self.config.benchmark
        runs: List[EstimateRun] = []

        def run(label: Optional[str] = None, net: Optional[ScoreNetwork] = None, **changes) -> EstimateRun:
            settings = base.model_copy(update=changes)
            result = self.run_estimator(settings, images, label=label, network=net, recorder=recorder)
            runs.append(result)
            return result

        if bench.include_measurement:
            run(method=EstimatorMethod.MEASUREMENT)

        moment_reports = []
        for size in bench.moment_sizes:
            result = run(method=EstimatorMethod.MOMENT, window=WindowSpec(size=size, padding=base.window.padding))
            moment_reports.append(
                (size, evaluate(result.maps, truths, "moment", result.window, self.config.evaluate.data_range))
            )
        best_size = max(moment_reports, key=lambda item: item[1].psnr_db)[0] if moment_reports else base.window.size
        run(
            method=EstimatorMethod.ML,
            window=WindowSpec(size=best_size, stride=max(best_size // 2, 1), padding=base.window.padding),
        )

        for sizes in bench.wmc_size_sets:
            run(method=EstimatorMethod.WMC, sizes=list(sizes))

        run(net=network, method=EstimatorMethod.UNICORN)
        if bench.include_unfiltered and base.unicorn.filter.kind != "none":
            raw = base.unicorn.model_copy(update={"filter": FilterSpec(kind="none")})
            run(label="unicorn-raw", net=network, method=EstimatorMethod.UNICORN, unicorn=raw)

        reports, stats = self.score_runs(runs, truths)
        self.write_reports(reports, stats, recorder)
        best = best_report(reports)
        recorder.note(f"best={best.method} {best.window} psnr={best.psnr_db:.4f}")
        return reports


"""End-to-end runs at desk scale. Each trains a score network, so all are marked slow."""

from typing import List

import numpy as np
import pandas as pd
import pytest

from nakagami_qus.config import (
    AnnealingSchedule,
    DatasetSection,
    PathsSection,
    RunConfig,
    TrainConfig,
    TrainSection,
    UnicornConfig,
)
from nakagami_qus.manifest import ManifestRecorder
from nakagami_qus.metrics import best_report
from nakagami_qus.models import EnvelopeImage, MetricReport, NakagamiParams
from nakagami_qus.nakagami import sample
from nakagami_qus.pipeline import ExperimentRunner
from nakagami_qus.score_estimator import unicorn_map
from nakagami_qus.score_model import build_network, forward
from nakagami_qus.training import train

pytestmark = pytest.mark.slow

DESK_TRAINING = TrainConfig(batch_size=16, epochs=250, learning_rate=1e-3, weight_decay=0.0, seed=0)


def _benchmark(tmp_path, dataset: DatasetSection) -> List[MetricReport]:
    config = RunConfig(
        dataset=dataset,
        train=TrainSection(config=DESK_TRAINING, schedule=AnnealingSchedule(sigma_min=0.01, sigma_max=0.1)),
        paths=PathsSection(input=tmp_path, output=tmp_path),
    )
    return ExperimentRunner(config).benchmark(ManifestRecorder("benchmark", config, tmp_path))


def test_score_network_learns_rayleigh_score():
    rng = np.random.default_rng(2024)
    rayleigh = NakagamiParams(1.0, 1.0)
    images = [EnvelopeImage(sample(rayleigh, 32 * 32, rng).reshape(32, 32)) for _ in range(512)]
    net = build_network(TrainSection().topology, seed=0)
    result = train(
        net,
        images,
        TrainConfig(batch_size=16, epochs=40, learning_rate=1e-3, weight_decay=0.0, seed=0),
        AnnealingSchedule(sigma_min=0.01, sigma_max=0.1),
    )
    tenth = len(result.loss_history) // 10
    assert np.mean(result.loss_history[-tenth:]) < np.mean(result.loss_history[:tenth])

    held_out = EnvelopeImage(sample(rayleigh, 64 * 64, rng).reshape(64, 64))
    scores = forward(net, held_out)
    r = held_out.data
    band = (r >= 0.3) & (r <= 1.5)
    assert np.median(np.abs(scores[band] - (1.0 / r[band] - 2.0 * r[band]))) < 0.15

    estimate = unicorn_map(held_out, scores, UnicornConfig())
    assert np.mean(estimate.values[estimate.valid]) == pytest.approx(1.0, abs=0.15)


def test_benchmark_ranks_unicorn_and_wmc_above_moment(tmp_path):
    reports = _benchmark(tmp_path, DatasetSection(generators=["ramp", "disk"], count=64, seed=0))
    moment = [r for r in reports if r.method == "moment"]
    unicorn = best_report(reports, "unicorn")
    wmc = best_report(reports, "wmc")

    assert unicorn.psnr_db > max(r.psnr_db for r in moment) + 0.5
    assert wmc.psnr_db > min(r.psnr_db for r in moment) + 0.5
    assert len(pd.read_csv(tmp_path / "metrics.csv")) == len(reports)


def test_lesion_roi_separates_regimes(tmp_path):
    dataset = DatasetSection(generators=["lesion"], count=64, height=48, width=48, seed=0)
    _benchmark(tmp_path, dataset)
    stats = pd.read_csv(tmp_path / "roi_stats.csv").set_index("label")

    methods = stats[stats.index.str.match(r"^(moment|ml|wmc|unicorn) ")]
    assert len(methods) == 7
    assert np.all(methods["mean"] < 1.0)
    closest = (methods["mean"] - dataset.lesion_m).abs().idxmin()
    assert closest == "unicorn median:3"

import hashlib
import json

import numpy as np
import pandas as pd
import pytest

from nakagami_qus.config import EstimateSection
from nakagami_qus.errors import ArtifactIOError, ConfigurationError
from nakagami_qus.formats import read_raster
from nakagami_qus.manifest import ManifestRecorder, hash_artifacts, read_manifest
from nakagami_qus.models import EstimatorMethod
from nakagami_qus.pipeline import ExperimentRunner, estimate_tag


def _recorder(command, config):
    return ManifestRecorder(command, config, config.paths.output)


@pytest.fixture
def simulated_runner(small_run_config):
    runner = ExperimentRunner(small_run_config)
    runner.simulate(_recorder("simulate", small_run_config))
    return runner


@pytest.fixture
def trained_runner(simulated_runner):
    simulated_runner.train(_recorder("train", simulated_runner.config))
    return simulated_runner


class TestEstimateTag:
    @pytest.mark.parametrize(
        "method,window,expected",
        [
            ("moment", "11", "moment-11"),
            ("ml", "11/5", "ml-11s5"),
            ("wmc", "9,11,13", "wmc-9_11_13"),
            ("unicorn", "median:3", "unicorn-median3"),
        ],
    )
    def test_tag(self, method, window, expected):
        assert estimate_tag(method, window) == expected


class TestSimulate:
    def test_writes_split_pairs(self, small_run_config):
        runner = ExperimentRunner(small_run_config)
        recorder = _recorder("simulate", small_run_config)
        counts = runner.simulate(recorder)
        out = runner.output_dir
        assert counts == {"train": 5, "test": 1}
        assert len(list((out / "train").glob("truth_*.nkrf"))) == 5
        assert len(list((out / "train").glob("measurement_*.nkrf"))) == 5
        assert len(recorder.artifacts) == 12
        assert recorder.notes == ["omega=1.0"]

    def test_truth_and_measurement_shapes_agree(self, simulated_runner):
        truth = read_raster(simulated_runner.output_dir / "test" / "truth_0000.nkrf")
        measurement = read_raster(simulated_runner.output_dir / "test" / "measurement_0000.nkrf")
        assert truth.data.shape == measurement.data.shape == (16, 16)
        assert np.all(measurement.data >= 0.0)
        assert np.all((truth.data >= 0.5) & (truth.data <= 2.0))

    def test_unwritable_output(self, small_run_config, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("")
        config = small_run_config.model_copy(
            update={"paths": small_run_config.paths.model_copy(update={"output": blocker / "run"})}
        )
        with pytest.raises(ArtifactIOError):
            ExperimentRunner(config).simulate(_recorder("simulate", config))


class TestTrain:
    def test_writes_checkpoint_and_history(self, trained_runner):
        out = trained_runner.output_dir
        assert (out / "score_network.nksn").exists()
        history = pd.read_csv(out / "loss_history.csv")
        assert list(history.columns) == ["step", "delta", "loss", "residual"]
        # 5 images, batch 2, one epoch
        assert len(history) == 3
        assert history["delta"].iloc[0] == pytest.approx(0.1)
        assert history["delta"].iloc[-1] == pytest.approx(0.01)
        assert np.all(np.isfinite(history["loss"]))
        assert np.all(history["residual"] > 0)

    def test_requires_simulated_inputs(self, small_run_config):
        with pytest.raises(ArtifactIOError):
            ExperimentRunner(small_run_config).train(_recorder("train", small_run_config))


class TestEstimate:
    def test_moment_maps_and_sidecar(self, simulated_runner):
        run = simulated_runner.estimate(_recorder("estimate", simulated_runner.config))
        folder = simulated_runner.output_dir / "estimates" / "moment-5"
        assert run.tag == "moment-5"
        assert len(run.maps) == 1
        assert (folder / "estimate_0000.nkrf").exists()
        assert json.loads((folder / "estimate.json").read_text()) == {"method": "moment", "window": "5"}

    def test_unicorn_needs_checkpoint(self, simulated_runner):
        config = simulated_runner.config.model_copy(update={"estimate": EstimateSection(method="unicorn")})
        with pytest.raises(ConfigurationError):
            ExperimentRunner(config).estimate(_recorder("estimate", config))

    def test_unicorn_writes_scores(self, trained_runner):
        settings = EstimateSection(
            method="unicorn", checkpoint=str(trained_runner.checkpoint_path()), write_scores=True
        )
        config = trained_runner.config.model_copy(update={"estimate": settings})
        recorder = _recorder("estimate", config)
        run = ExperimentRunner(config).estimate(recorder)
        folder = trained_runner.output_dir / "estimates" / run.tag
        assert run.tag == "unicorn-median3"
        assert (folder / "scores_0000.nkrf").exists()
        scores = read_raster(folder / "scores_0000.nkrf").data
        assert scores.shape == (16, 16)
        assert np.all(np.isfinite(scores))


class TestEvaluate:
    def test_metrics_for_each_estimate_set(self, simulated_runner):
        config = simulated_runner.config
        simulated_runner.estimate(_recorder("estimate", config))
        wmc_settings = config.estimate.model_copy(update={"method": EstimatorMethod.WMC})
        wmc = config.model_copy(update={"estimate": wmc_settings})
        ExperimentRunner(wmc).estimate(_recorder("estimate", wmc))

        reports = simulated_runner.evaluate(_recorder("evaluate", config))
        frame = pd.read_csv(simulated_runner.output_dir / "metrics.csv", dtype={"window": str})
        assert [(r.method, r.window) for r in reports] == [("moment", "5"), ("wmc", "3,5")]
        assert list(frame["method"]) == ["moment", "wmc"]
        assert not (simulated_runner.output_dir / "roi_stats.csv").exists()

    def test_without_estimates(self, simulated_runner):
        with pytest.raises(ArtifactIOError):
            simulated_runner.evaluate(_recorder("evaluate", simulated_runner.config))

    def test_lesion_truths_produce_roi_tables(self, small_run_config):
        dataset = small_run_config.dataset.model_copy(update={"generators": ["lesion"]})
        config = small_run_config.model_copy(update={"dataset": dataset})
        runner = ExperimentRunner(config)
        runner.simulate(_recorder("simulate", config))
        runner.estimate(_recorder("estimate", config))
        runner.evaluate(_recorder("evaluate", config))

        stats = pd.read_csv(runner.output_dir / "roi_stats.csv")
        assert list(stats["label"]) == ["moment 5", "truth"]
        truth_row = stats[stats["label"] == "truth"].iloc[0]
        assert truth_row["mean"] == pytest.approx(0.6)
        assert truth_row["fraction_pre-Rayleigh"] == 1.0
        histograms = pd.read_csv(runner.output_dir / "roi_histograms.csv")
        assert len(histograms) == 2 * config.evaluate.bins


class TestBenchmark:
    def test_every_method_is_reported(self, small_run_config):
        runner = ExperimentRunner(small_run_config)
        recorder = _recorder("benchmark", small_run_config)
        reports = runner.benchmark(recorder)
        assert len(reports) == 9
        methods = sorted({r.method for r in reports})
        assert methods == ["measurement", "ml", "moment", "unicorn", "unicorn-raw", "wmc"]
        assert any(note.startswith("best=") for note in recorder.notes)
        assert len(pd.read_csv(runner.output_dir / "metrics.csv")) == 9

    def test_second_run_reuses_checkpoint(self, small_run_config):
        ExperimentRunner(small_run_config).benchmark(_recorder("benchmark", small_run_config))
        recorder = _recorder("benchmark", small_run_config)
        ExperimentRunner(small_run_config).benchmark(recorder)
        assert "reused existing score network checkpoint" in recorder.notes


class TestManifest:
    def test_written_manifest_reads_back(self, small_run_config):
        runner = ExperimentRunner(small_run_config)
        recorder = _recorder("simulate", small_run_config)
        runner.simulate(recorder)
        path = recorder.write()
        assert path.name == "manifest_simulate.json"

        manifest = read_manifest(path)
        assert manifest.command == "simulate"
        assert manifest.config["simulate"]["seed"] == 5
        truth = runner.output_dir / "train" / "truth_0000.nkrf"
        assert manifest.artifacts["train/truth_0000.nkrf"] == hashlib.sha256(truth.read_bytes()).hexdigest()

    def test_paths_outside_root_keep_full_path(self, tmp_path):
        outside = tmp_path / "elsewhere.bin"
        outside.write_bytes(b"x")
        hashes = hash_artifacts([outside], tmp_path / "run")
        assert list(hashes) == [outside.as_posix()]


class TestDeterminism:
    def test_seeded_runs_produce_identical_artifacts(self, small_run_config, tmp_path):
        manifests = []
        for name in ("first", "second"):
            paths = small_run_config.paths.model_copy(update={"input": tmp_path / name, "output": tmp_path / name})
            config = small_run_config.model_copy(update={"paths": paths})
            runner = ExperimentRunner(config)
            artifacts = {}
            for command, step in (("simulate", runner.simulate), ("train", runner.train), ("estimate", runner.estimate)):
                recorder = _recorder(command, config)
                step(recorder)
                artifacts.update(recorder.build().artifacts)
            manifests.append(artifacts)
        assert manifests[0] == manifests[1]
        assert "score_network.nksn" in manifests[0]
        assert "loss_history.csv" in manifests[0]

import numpy as np
import pytest
import torch
import yaml

from nakagami_qus.config import (
    AnnealingSchedule,
    DatasetSection,
    EstimateSection,
    PathsSection,
    RunConfig,
    SimulateSection,
    Topology,
    TrainConfig,
    TrainSection,
)
from nakagami_qus.models import EnvelopeImage, GroundTruthMap, NakagamiParams
from nakagami_qus.nakagami import sample, sample_field
from nakagami_qus.score_model import build_network


@pytest.fixture
def rng():
    """Seeded numpy generator"""
    return np.random.default_rng(20240611)


@pytest.fixture
def tiny_topology():
    """Two-level network with 433 parameters, small enough for finite differences"""
    return Topology(levels=2, channels=(2, 4), kernel_size=3)


@pytest.fixture
def tiny_network(tiny_topology):
    return build_network(tiny_topology, seed=0)


@pytest.fixture
def randomized_network(tiny_topology):
    """Tiny network with every parameter (head included) drawn at random"""
    net = build_network(tiny_topology, seed=0)
    generator = torch.Generator().manual_seed(7)
    with torch.no_grad():
        for p in net.parameters():
            p.uniform_(-0.5, 0.5, generator=generator)
    return net


@pytest.fixture
def rayleigh_image(rng):
    """32x32 envelope image drawn i.i.d. from Nakagami(m=1, omega=1)"""
    return EnvelopeImage(sample(NakagamiParams(1.0), 32 * 32, rng).reshape(32, 32))


@pytest.fixture
def ramp_truth():
    """m rising linearly from 0.5 to 2.0 across 32 columns"""
    values = np.tile(np.linspace(0.5, 2.0, 32), (32, 1))
    return GroundTruthMap.from_values(values)


@pytest.fixture
def ramp_measurement(ramp_truth, rng):
    return EnvelopeImage(sample_field(ramp_truth.values, 1.0, rng))


@pytest.fixture
def small_run_config(tmp_path, tiny_topology):
    """Desk-sized configuration that runs every command in seconds"""
    return RunConfig(
        dataset=DatasetSection(generators=["ramp", "disk"], count=6, height=16, width=16, seed=3),
        simulate=SimulateSection(omega=1.0, seed=5),
        train=TrainSection(
            config=TrainConfig(batch_size=2, epochs=1, learning_rate=1e-3, seed=11),
            schedule=AnnealingSchedule(sigma_min=0.01, sigma_max=0.1),
            topology=tiny_topology,
        ),
        estimate=EstimateSection(window={"size": 5}, sizes=[3, 5]),
        paths=PathsSection(input=tmp_path / "run", output=tmp_path / "run"),
    )


@pytest.fixture
def small_config_file(tmp_path):
    """YAML configuration matching small_run_config, for CLI tests"""
    run_dir = tmp_path / "run"
    raw = {
        "dataset": {"generators": ["ramp", "disk"], "count": 6, "height": 16, "width": 16, "seed": 3},
        "simulate": {"omega": 1.0, "seed": 5},
        "train": {
            "config": {"batch_size": 2, "epochs": 1, "learning_rate": 1e-3, "seed": 11},
            "topology": {"levels": 2, "channels": [2, 4], "kernel_size": 3},
        },
        "estimate": {"window": {"size": 5}, "sizes": [3, 5]},
        "paths": {"input": str(run_dir), "output": str(run_dir)},
    }
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(raw), encoding="utf-8")
    return path

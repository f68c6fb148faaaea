"""
Nakagami QUS

Per-pixel Nakagami shape estimation for ultrasound envelope images: a score-function
estimator trained by denoising, benchmarked against sliding-window moment, maximum
likelihood and window-modulated compounding estimators.
"""

__version__ = "0.1.0"
__author__ = "DatSciX"

from .config import RunConfig, load_validated_config
from .estimators import create_estimator
from .models import EnvelopeImage, GroundTruthMap, MetricReport, NakagamiParams, ParamMap, RoiStats
from .pipeline import ExperimentRunner

__all__ = [
    "RunConfig",
    "load_validated_config",
    "create_estimator",
    "EnvelopeImage",
    "GroundTruthMap",
    "MetricReport",
    "NakagamiParams",
    "ParamMap",
    "RoiStats",
    "ExperimentRunner",
]

import json
import logging
import os
import sys
import time
from functools import wraps
from pathlib import Path
from typing import Callable, Optional

import structlog
import typer
from dotenv import load_dotenv

from . import __version__
from .config import RunConfig, build_overrides, load_validated_config
from .errors import NakagamiError, to_error_response
from .manifest import ManifestRecorder
from .pipeline import ExperimentRunner

app = typer.Typer(
    name="nakagami-qus",
    help="Nakagami parametric imaging: simulate, train, estimate, evaluate, benchmark.",
    no_args_is_help=True,
    add_completion=False,
)

logger = structlog.get_logger()


def configure_logging(level: Optional[str] = None) -> None:
    load_dotenv()
    level_name = (level or os.getenv("NAKAGAMI_LOG_LEVEL") or "INFO").upper()
    logging.basicConfig(format="%(message)s", stream=sys.stderr, level=getattr(logging, level_name, logging.INFO))
    logging.getLogger().setLevel(getattr(logging, level_name, logging.INFO))

    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            structlog.processors.JSONRenderer(),
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=True,
    )


def monitor_performance(func: Callable) -> Callable:
    @wraps(func)
    def wrapper(*args, **kwargs):
        start_time = time.time()
        command = func.__name__

        try:
            logger.info("Command started", command=command, options=sorted(k for k, v in kwargs.items() if v is not None))
            result = func(*args, **kwargs)
            logger.info(
                "Command completed",
                command=command,
                execution_time=time.time() - start_time,
                success=True,
            )
            return result

        except Exception as e:
            logger.error(
                "Command failed",
                command=command,
                execution_time=time.time() - start_time,
                error=str(e),
                error_type=type(e).__name__,
            )
            raise
    return wrapper


def _run(command: str, config: RunConfig, action: Callable[[ExperimentRunner, ManifestRecorder], object]) -> None:
    """Execute one pipeline step and write its manifest; errors become exit codes."""
    try:
        runner = ExperimentRunner(config)
        recorder = ManifestRecorder(command, config, runner.output_dir)
        action(runner, recorder)
        manifest_path = recorder.write()
        typer.echo(str(manifest_path))
    except NakagamiError as e:
        typer.echo(json.dumps(to_error_response(e), default=str), err=True)
        raise typer.Exit(code=e.exit_code)


def _load(config_path: Optional[Path], **flags) -> RunConfig:
    try:
        return load_validated_config(config_path, build_overrides(**flags))
    except NakagamiError as e:
        typer.echo(json.dumps(to_error_response(e), default=str), err=True)
        raise typer.Exit(code=e.exit_code)


ConfigOption = typer.Option(None, "--config", "-c", help="YAML run configuration.")
SeedOption = typer.Option(None, "--seed", help="Seed for dataset, simulation and training.")
OutOption = typer.Option(None, "--out", help="Output directory.")
InputOption = typer.Option(None, "--input", help="Input directory (output of a previous step).")
LogLevelOption = typer.Option(None, "--log-level", help="DEBUG, INFO, WARNING or ERROR.")


@app.command()
@monitor_performance
def simulate(
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out: Optional[Path] = OutOption,
    log_level: Optional[str] = LogLevelOption,
) -> None:
    """Write ground-truth and measurement NKRF pairs, split into train and test."""
    configure_logging(log_level)
    run_config = _load(config, seed=seed, out=out)
    _run("simulate", run_config, lambda runner, recorder: runner.simulate(recorder))


@app.command()
@monitor_performance
def train(
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    input_dir: Optional[Path] = InputOption,
    out: Optional[Path] = OutOption,
    log_level: Optional[str] = LogLevelOption,
) -> None:
    """Train the score network on the training measurements."""
    configure_logging(log_level)
    run_config = _load(config, seed=seed, out=out, input_dir=input_dir)
    _run("train", run_config, lambda runner, recorder: runner.train(recorder))


@app.command()
@monitor_performance
def estimate(
    config: Optional[Path] = ConfigOption,
    method: Optional[str] = typer.Option(None, "--method", help="moment, ml, wmc, unicorn or measurement."),
    window: Optional[int] = typer.Option(None, "--window", help="Odd sliding-window size."),
    sizes: Optional[str] = typer.Option(None, "--sizes", help="Comma-separated WMC window sizes."),
    filter_text: Optional[str] = typer.Option(None, "--filter", help="median:k, average:k or none."),
    omega_text: Optional[str] = typer.Option(None, "--omega", help="global, local:k or fixed:v."),
    checkpoint: Optional[Path] = typer.Option(None, "--checkpoint", help="Score network checkpoint (NKSN)."),
    input_dir: Optional[Path] = InputOption,
    out: Optional[Path] = OutOption,
    log_level: Optional[str] = LogLevelOption,
) -> None:
    """Estimate Nakagami m maps for every measurement in the configured split."""
    configure_logging(log_level)
    run_config = _load(
        config,
        method=method,
        window=window,
        sizes=sizes,
        filter_text=filter_text,
        omega_text=omega_text,
        checkpoint=checkpoint,
        input_dir=input_dir,
        out=out,
    )
    _run("estimate", run_config, lambda runner, recorder: runner.estimate(recorder))


@app.command()
@monitor_performance
def evaluate(
    config: Optional[Path] = ConfigOption,
    input_dir: Optional[Path] = InputOption,
    out: Optional[Path] = OutOption,
    log_level: Optional[str] = LogLevelOption,
) -> None:
    """Score every estimate set against ground truth; ROI statistics when truths carry masks."""
    configure_logging(log_level)
    run_config = _load(config, input_dir=input_dir, out=out)
    _run("evaluate", run_config, lambda runner, recorder: runner.evaluate(recorder))


@app.command()
@monitor_performance
def benchmark(
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    filter_text: Optional[str] = typer.Option(None, "--filter", help="median:k, average:k or none."),
    omega_text: Optional[str] = typer.Option(None, "--omega", help="global, local:k or fixed:v."),
    out: Optional[Path] = OutOption,
    log_level: Optional[str] = LogLevelOption,
) -> None:
    """Run simulate, train, every estimator and evaluate in one output directory."""
    configure_logging(log_level)
    run_config = _load(config, seed=seed, filter_text=filter_text, omega_text=omega_text, out=out)
    _run("benchmark", run_config, lambda runner, recorder: runner.benchmark(recorder))


@app.command()
def version() -> None:
    """Print the tool version."""
    typer.echo(__version__)


def main() -> None:
    app()


if __name__ == "__main__":
    main()

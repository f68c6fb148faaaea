"""
Score-network training with the amortized residual denoising objective

    L(theta) = E || u + sigma * s_theta(R + sigma * u) ||^2 / dim

where u ~ N(0, I) per pixel and sigma = |z|, z ~ N(0, delta^2) per image. The
perturbation scale delta decays linearly from sigma_max to sigma_min over the run.

Trainers weight each image's residual by 1 / sigma^2 by default, which turns the loss
into denoising score matching. The noise is drawn in antithetic pairs (+u, -u) and the
parameter-free term ||u / sigma||^2 is dropped, leaving

    (u / sigma) . (s_theta(R + sigma u) - s_theta(R - sigma u)) + (|s_+|^2 + |s_-|^2) / 2

whose gradient stays bounded as sigma shrinks. ``weighting="none"`` trains on L itself.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
import torch
from torch.nn.utils import parameters_to_vector, vector_to_parameters

from .config import AnnealingSchedule, TrainConfig
from .errors import DomainError, TrainingDivergenceError
from .models import EnvelopeImage
from .optim import AdamW
from .score_model import ScoreNetwork, save_network

logger = structlog.get_logger(__name__)

ImageShape = Tuple[int, int]

# Keeps u / sigma finite when a draw of z is exactly zero
SIGMA_FLOOR = 1e-12


def delta_at(schedule: AnnealingSchedule, step: int, total_steps: int) -> float:
    """delta_t = sigma_max + (sigma_min - sigma_max) * t / total_steps, t clamped to the run."""
    if total_steps <= 0:
        return schedule.sigma_max
    t = min(max(step, 0), total_steps)
    return schedule.sigma_max + (schedule.sigma_min - schedule.sigma_max) * t / total_steps


@dataclass
class NoiseDraw:
    """Per-pixel u and per-image sigma for one shape group of a batch."""
    u: torch.Tensor
    sigma: torch.Tensor


def stack_images(images: Sequence[EnvelopeImage], dtype: torch.dtype) -> Dict[ImageShape, torch.Tensor]:
    """Group images by shape into (n, 1, H, W) tensors, preserving order within a group."""
    groups: Dict[ImageShape, List[np.ndarray]] = {}
    for image in images:
        groups.setdefault(image.shape, []).append(image.data)
    return {
        shape: torch.as_tensor(np.stack(arrays)[:, None], dtype=dtype) for shape, arrays in groups.items()
    }


def draw_noise(batch: torch.Tensor, delta: float, generator: torch.Generator) -> NoiseDraw:
    u = torch.randn(batch.shape, generator=generator, dtype=batch.dtype)
    z = torch.randn(batch.shape[0], generator=generator, dtype=batch.dtype) * delta
    return NoiseDraw(u=u, sigma=z.abs())


def ardae_objective(net: ScoreNetwork, batch: torch.Tensor, noise: NoiseDraw) -> torch.Tensor:
    """Summed squared residual over one shape group; divide by the element count for the mean."""
    sigma = noise.sigma.view(-1, 1, 1, 1)
    scores = net(batch + sigma * noise.u)
    return ((noise.u + sigma * scores) ** 2).sum()


def weighted_objective(net: ScoreNetwork, batch: torch.Tensor, noise: NoiseDraw) -> Tuple[torch.Tensor, torch.Tensor]:
    """sigma^-2 weighted objective over one antithetic pair of draws.

    Returns the summed weighted loss (without its parameter-free part) and, detached, the
    summed plain residual averaged over the two draws.
    """
    n = batch.shape[0]
    sigma = noise.sigma.view(-1, 1, 1, 1)
    scores = net(torch.cat([batch + sigma * noise.u, batch - sigma * noise.u]))
    plus, minus = scores[:n], scores[n:]
    scaled = noise.u / sigma.clamp_min(SIGMA_FLOOR)
    weighted = (scaled * (plus - minus) + 0.5 * (plus**2 + minus**2)).sum()
    with torch.no_grad():
        plain = 0.5 * (((noise.u + sigma * plus) ** 2).sum() + ((noise.u - sigma * minus) ** 2).sum())
    return weighted, plain


def random_flips(batch: torch.Tensor, generator: torch.Generator) -> torch.Tensor:
    """Flip each image left-right and up-down independently with probability 1/2."""
    coins = (torch.rand(batch.shape[0], 2, generator=generator) < 0.5).view(-1, 2, 1, 1, 1)
    flipped = torch.where(coins[:, 0], batch.flip(-1), batch)
    return torch.where(coins[:, 1], flipped.flip(-2), flipped)


def _batch_objective(
    net: ScoreNetwork,
    groups: Dict[ImageShape, torch.Tensor],
    delta: float,
    generator: torch.Generator,
    weighting: str = "none",
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Mean per-element training objective and plain residual loss across shape groups."""
    objective = residual = None
    elements = 0
    for batch in groups.values():
        noise = draw_noise(batch, delta, generator)
        if weighting == "inverse_variance":
            term, plain = weighted_objective(net, batch, noise)
        else:
            term = ardae_objective(net, batch, noise)
            plain = term.detach()
        objective = term if objective is None else objective + term
        residual = plain if residual is None else residual + plain
        elements += batch.numel()
    return objective / elements, residual / elements


def ardae_loss(
    net: ScoreNetwork,
    batch: Sequence[EnvelopeImage],
    delta: float,
    generator: torch.Generator,
) -> Tuple[float, np.ndarray]:
    """Mean per-element loss and its gradient with respect to the flat parameter vector."""
    if not batch:
        raise DomainError("ardae_loss needs a non-empty batch")
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    dtype = next(net.parameters()).dtype

    net.zero_grad(set_to_none=True)
    loss, _ = _batch_objective(net, stack_images(batch, dtype), delta, generator)
    value = float(loss.detach())
    if not math.isfinite(value):
        raise TrainingDivergenceError("AR-DAE loss is not finite", {"delta": delta, "loss": value})
    loss.backward()
    grad = torch.cat([p.grad.reshape(-1) for p in net.parameters()])
    return value, grad.detach().to(torch.float64).numpy()


@dataclass
class TrainResult:
    network: ScoreNetwork
    loss_history: List[float] = field(default_factory=list)
    residual_history: List[float] = field(default_factory=list)
    deltas: List[float] = field(default_factory=list)
    total_steps: int = 0


class ScoreTrainer:
    """Runs epochs x batches AdamW steps on a score network.

    Batches are drawn from a per-epoch permutation of the dataset (numpy generator
    seeded by ``config.seed``); noise comes from a torch generator with the same seed,
    so a run is fully determined by (seed, config, data).
    """

    def __init__(
        self,
        net: ScoreNetwork,
        config: TrainConfig,
        schedule: AnnealingSchedule,
        checkpoint_path: Optional[Path] = None,
    ):
        self.net = net
        self.config = config
        self.schedule = schedule
        self.checkpoint_path = checkpoint_path
        self.optimizer = AdamW(
            net.parameters(),
            lr=config.learning_rate,
            betas=config.adam_betas,
            eps=config.eps,
            weight_decay=config.weight_decay,
        )
        self.rng = np.random.default_rng(config.seed)
        self.generator = torch.Generator().manual_seed(config.seed)
        self.dtype = next(net.parameters()).dtype

    def batches_per_epoch(self, dataset_size: int) -> int:
        return math.ceil(dataset_size / self.config.batch_size)

    def total_steps(self, dataset_size: int) -> int:
        return self.schedule.total_steps or self.config.epochs * self.batches_per_epoch(dataset_size)

    def _lr_scheduler(self, span: int) -> Optional[torch.optim.lr_scheduler.LRScheduler]:
        if self.config.lr_schedule == "constant":
            return None
        return torch.optim.lr_scheduler.CosineAnnealingLR(
            self.optimizer, T_max=span, eta_min=self.config.learning_rate * self.config.min_lr_ratio
        )

    def _diverged(self, step: int, delta: float, last_loss: Optional[float], last_good: torch.Tensor):
        with torch.no_grad():
            vector_to_parameters(last_good, self.net.parameters())
        details = {"step": step, "delta": delta, "last_loss": last_loss}
        if self.checkpoint_path is not None:
            save_network(self.net, self.checkpoint_path)
            details["checkpoint"] = str(self.checkpoint_path)
        logger.error("Training diverged", **details)
        raise TrainingDivergenceError(f"Loss became non-finite at step {step}", details)

    def train(self, dataset: Sequence[EnvelopeImage]) -> TrainResult:
        if not dataset:
            raise DomainError("Training needs a non-empty dataset")
        total = self.total_steps(len(dataset))
        result = TrainResult(network=self.net, total_steps=total)
        # The last step runs at sigma_min exactly
        span = max(total - 1, 1)
        scheduler = self._lr_scheduler(span)

        logger.info(
            "Training score network",
            images=len(dataset),
            parameters=self.net.parameter_count(),
            total_steps=total,
            sigma_max=self.schedule.sigma_max,
            sigma_min=self.schedule.sigma_min,
            weighting=self.config.weighting,
            lr_schedule=self.config.lr_schedule,
        )

        step = 0
        last_loss: Optional[float] = None
        for epoch in range(self.config.epochs):
            order = self.rng.permutation(len(dataset))
            epoch_losses = []
            for start in range(0, len(order), self.config.batch_size):
                if step >= total:
                    break
                delta = delta_at(self.schedule, step, span)
                groups = stack_images([dataset[i] for i in order[start : start + self.config.batch_size]], self.dtype)
                if self.config.augment:
                    groups = {shape: random_flips(batch, self.generator) for shape, batch in groups.items()}
                last_good = parameters_to_vector(self.net.parameters()).detach().clone()

                self.optimizer.zero_grad(set_to_none=True)
                loss, residual = _batch_objective(self.net, groups, delta, self.generator, self.config.weighting)
                value = float(loss.detach())
                if not math.isfinite(value):
                    self._diverged(step, delta, last_loss, last_good)
                loss.backward()
                self.optimizer.step()
                if scheduler is not None:
                    scheduler.step()

                result.loss_history.append(value)
                result.residual_history.append(float(residual))
                result.deltas.append(delta)
                epoch_losses.append(value)
                last_loss = value
                step += 1

            if epoch_losses:
                logger.info(
                    "Epoch complete",
                    epoch=epoch + 1,
                    mean_loss=float(np.mean(epoch_losses)),
                    lr=self.optimizer.param_groups[0]["lr"],
                    delta=result.deltas[-1],
                )

        if self.checkpoint_path is not None:
            save_network(self.net, self.checkpoint_path)
        return result


def train(
    net: ScoreNetwork,
    dataset: Sequence[EnvelopeImage],
    config: TrainConfig,
    schedule: AnnealingSchedule,
    checkpoint_path: Optional[Path] = None,
) -> TrainResult:
    return ScoreTrainer(net, config, schedule, checkpoint_path).train(dataset)

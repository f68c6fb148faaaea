from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Tuple

import torch


@dataclass
class AdamWState:
    """First/second moment estimates and the step counter for one parameter tensor."""
    step: int = 0
    exp_avg: Optional[torch.Tensor] = None
    exp_avg_sq: Optional[torch.Tensor] = None


def adamw_step(
    param: torch.Tensor,
    grad: torch.Tensor,
    state: AdamWState,
    lr: float,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> torch.Tensor:
    """One decoupled-weight-decay Adam update of ``param`` in place.

    Decay is applied to the pre-update parameters, so a zero gradient scales the
    parameters by exactly (1 - lr * weight_decay).
    """
    if grad.shape != param.shape:
        raise ValueError(f"gradient shape {tuple(grad.shape)} does not match parameter {tuple(param.shape)}")
    beta1, beta2 = betas
    if state.exp_avg is None:
        state.exp_avg = torch.zeros_like(param)
        state.exp_avg_sq = torch.zeros_like(param)

    state.step += 1
    t = state.step
    state.exp_avg.mul_(beta1).add_(grad, alpha=1 - beta1)
    state.exp_avg_sq.mul_(beta2).addcmul_(grad, grad, value=1 - beta2)

    if weight_decay:
        param.mul_(1 - lr * weight_decay)

    bias_correction1 = 1 - beta1**t
    bias_correction2 = 1 - beta2**t
    denom = (state.exp_avg_sq / bias_correction2).sqrt_().add_(eps)
    param.addcdiv_(state.exp_avg, denom, value=-lr / bias_correction1)
    return param


class AdamW(torch.optim.Optimizer):
    """AdamW as a torch optimizer; every update goes through adamw_step."""

    def __init__(
        self,
        params: Iterable[torch.Tensor],
        lr: float = 2e-4,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        if lr <= 0:
            raise ValueError(f"Invalid learning rate: {lr}")
        if not all(0.0 < b < 1.0 for b in betas):
            raise ValueError(f"Invalid betas: {betas}")
        defaults = {"lr": lr, "betas": betas, "eps": eps, "weight_decay": weight_decay}
        super().__init__(params, defaults)

    @torch.no_grad()
    def step(self, closure: Optional[Callable] = None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()

        for group in self.param_groups:
            for p in group["params"]:
                if p.grad is None:
                    continue
                if "adamw" not in self.state[p]:
                    self.state[p]["adamw"] = AdamWState()
                adamw_step(
                    p,
                    p.grad,
                    self.state[p]["adamw"],
                    lr=group["lr"],
                    betas=group["betas"],
                    eps=group["eps"],
                    weight_decay=group["weight_decay"],
                )
        return loss

    def step_count(self) -> int:
        counts = [s["adamw"].step for s in self.state.values() if "adamw" in s]
        return max(counts, default=0)


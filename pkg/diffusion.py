# diffusion.py
"""
Forward corruption and reverse denoising of encoder hidden states.

Schedule arrays are stored with a leading step-0 entry so that index n in
the arrays is diffusion step n (alpha_bar[0] = 1, beta[0] = 0).
"""
import logging
from dataclasses import dataclass
from typing import Callable

import torch

from utils import ConfigError, DomainError, ShapeError

logger = logging.getLogger(__name__)

# eps_theta(corrupted_state, step) -> predicted noise; step is a long tensor
# with the state's batch shape.
NoisePredictor = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class NoiseSchedule:
    steps: int
    beta: torch.Tensor
    alpha: torch.Tensor
    alpha_bar: torch.Tensor
    beta_tilde: torch.Tensor

    def check_step(self, n: int, lowest: int = 1):
        if not lowest <= n <= self.steps:
            raise DomainError(f"Diffusion step {n} outside [{lowest}, {self.steps}].")


def make_schedule(steps: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule with the derived cumulative and posterior-variance arrays."""
    if steps < 1:
        raise ConfigError(f"Diffusion needs at least one step, got {steps}.")
    if not 0 < beta_start <= beta_end < 1:
        raise ConfigError(
            f"Require 0 < beta_start <= beta_end < 1, got beta_start={beta_start}, beta_end={beta_end}."
        )

    betas = torch.linspace(beta_start, beta_end, steps, dtype=torch.float64)
    beta = torch.cat([torch.zeros(1, dtype=torch.float64), betas])
    alpha = 1.0 - beta
    alpha_bar = torch.cumprod(alpha, dim=0)

    beta_tilde = torch.zeros_like(beta)
    beta_tilde[1:] = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta[1:]

    logger.debug(f"Built noise schedule: N={steps}, beta {beta_start}..{beta_end}, alpha_bar[N]={alpha_bar[-1]:.6f}")
    return NoiseSchedule(steps=steps, beta=beta, alpha=alpha, alpha_bar=alpha_bar, beta_tilde=beta_tilde)


def _coefficient(values: torch.Tensor, n, like: torch.Tensor) -> torch.Tensor:
    """Gathers schedule entries for step(s) n, shaped to broadcast against `like`."""
    if isinstance(n, torch.Tensor):
        picked = values[n].to(like.dtype)
        return picked.reshape(picked.shape + (1,))
    return values[n].to(like.dtype)


def _step_tensor(n: int, like: torch.Tensor) -> torch.Tensor:
    return torch.full(like.shape[:-1], n, dtype=torch.long)


def q_sample(h0: torch.Tensor, n, eps: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """Corrupts h0 to level n in closed form: sqrt(abar_n) h0 + sqrt(1 - abar_n) eps."""
    if h0.shape != eps.shape:
        raise ShapeError(f"Noise shape {tuple(eps.shape)} does not match state shape {tuple(h0.shape)}.")
    if isinstance(n, torch.Tensor):
        if bool(((n < 1) | (n > sched.steps)).any()):
            raise DomainError(f"Diffusion steps must lie in [1, {sched.steps}].")
    else:
        sched.check_step(n)
    alpha_bar = _coefficient(sched.alpha_bar, n, h0)
    return alpha_bar.sqrt() * h0 + (1.0 - alpha_bar).sqrt() * eps


def posterior_mean(h_n: torch.Tensor, h0: torch.Tensor, n: int, sched: NoiseSchedule) -> torch.Tensor:
    """Mean of q(h^{n-1} | h^n, h^0)."""
    if h_n.shape != h0.shape:
        raise ShapeError(f"State shapes differ: {tuple(h_n.shape)} vs {tuple(h0.shape)}.")
    sched.check_step(n, lowest=2)
    alpha_bar_n = sched.alpha_bar[n]
    alpha_bar_prev = sched.alpha_bar[n - 1]
    coef_n = sched.alpha[n].sqrt() * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar_n)
    coef_0 = alpha_bar_prev.sqrt() * sched.beta[n] / (1.0 - alpha_bar_n)
    return coef_n.to(h_n.dtype) * h_n + coef_0.to(h0.dtype) * h0


def elbo_loss(h0: torch.Tensor, eps_theta: NoisePredictor, sched: NoiseSchedule,
              generator: torch.Generator) -> torch.Tensor:
    """
    Simplified ELBO: squared error between drawn and predicted noise at a
    uniformly drawn step, summed over the state dimension and averaged over
    the batch. Draw order is the step first, then the noise.
    """
    batch_shape = h0.shape[:-1]
    n = torch.randint(1, sched.steps + 1, batch_shape, generator=generator)
    eps = torch.randn(h0.shape, generator=generator, dtype=h0.dtype)
    predicted = eps_theta(q_sample(h0, n, eps, sched), n)
    if predicted.shape != eps.shape:
        raise ShapeError(f"Noise predictor returned {tuple(predicted.shape)}, expected {tuple(eps.shape)}.")
    return ((eps - predicted) ** 2).sum(dim=-1).mean()


def reverse_step(h_n: torch.Tensor, n: int, eps_theta: NoisePredictor, z: torch.Tensor | None,
                 sched: NoiseSchedule) -> torch.Tensor:
    """One denoising step from level n to n - 1; z must be zero (or None) at n = 1."""
    sched.check_step(n)
    if z is None:
        z = torch.zeros_like(h_n)
    elif z.shape != h_n.shape:
        raise ShapeError(f"Reverse noise shape {tuple(z.shape)} does not match state shape {tuple(h_n.shape)}.")
    if n == 1 and bool((z != 0).any()):
        raise DomainError("The final reverse step is deterministic; z must be zero at n = 1.")

    beta = sched.beta[n].to(h_n.dtype)
    alpha = sched.alpha[n].to(h_n.dtype)
    alpha_bar = sched.alpha_bar[n].to(h_n.dtype)
    beta_tilde = sched.beta_tilde[n].to(h_n.dtype)

    predicted = eps_theta(h_n, _step_tensor(n, h_n))
    mean = (h_n - beta / (1.0 - alpha_bar).sqrt() * predicted) / alpha.sqrt()
    return mean + beta_tilde.sqrt() * z


def denoise(h_n: torch.Tensor, eps_theta: NoisePredictor, sched: NoiseSchedule,
            generator: torch.Generator | None = None, stochastic: bool = True) -> torch.Tensor:
    """
    Runs the reverse chain from level N down to 0. Fresh standard normal z is
    drawn for every step above 1 unless `stochastic` is False.
    """
    if stochastic and generator is None:
        raise ConfigError("A random generator is required for stochastic denoising.")
    h = h_n
    for n in range(sched.steps, 0, -1):
        if stochastic and n > 1:
            z = torch.randn(h.shape, generator=generator, dtype=h.dtype)
        else:
            z = None
        h = reverse_step(h, n, eps_theta, z, sched)
    return h

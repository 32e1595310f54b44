"""Noise schedule and closed-form diffusion algebra over the pansharpening residual."""

from dataclasses import dataclass

import torch

from .errors import ScheduleError, ShapeError


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    betas: torch.Tensor
    alphas: torch.Tensor
    alpha_bars: torch.Tensor
    posterior_variances: torch.Tensor

    def alpha_bar_prev(self, t: int) -> float:
        # alpha_bar_0 := 1
        return 1.0 if t <= 1 else float(self.alpha_bars[t - 2])


@dataclass
class DiffusionState:
    x_t: torch.Tensor
    t: torch.Tensor
    epsilon: torch.Tensor | None = None


def build_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if int(T) < 2:
        raise ScheduleError(f"T must be at least 2, got {T}", key="schedule.steps")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ScheduleError(
            f"need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]",
            key="schedule.beta_start",
        )
    betas = torch.linspace(beta_start, beta_end, int(T), dtype=torch.float64)
    alphas = 1.0 - betas
    alpha_bars = torch.cumprod(alphas, dim=0)
    alpha_bars_prev = torch.cat([torch.ones(1, dtype=torch.float64), alpha_bars[:-1]])
    posterior_variances = betas * (1.0 - alpha_bars_prev) / (1.0 - alpha_bars)
    return NoiseSchedule(
        T=int(T),
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        posterior_variances=posterior_variances,
    )


def schedule_from_config(cfg) -> NoiseSchedule:
    return build_schedule(cfg.steps, cfg.beta_start, cfg.beta_end)


def _check_t(t: torch.Tensor | int, sched: NoiseSchedule) -> torch.Tensor:
    steps = torch.as_tensor(t, dtype=torch.long)
    if steps.numel() == 0 or int(steps.min()) < 1 or int(steps.max()) > sched.T:
        raise ScheduleError(f"timestep out of range [1, {sched.T}]", key="t")
    return steps


def _gather(values: torch.Tensor, t: torch.Tensor | int, like: torch.Tensor) -> torch.Tensor:
    """Index a schedule table at 1-based steps and broadcast against ``like`` (batch-first)."""
    steps = torch.as_tensor(t, dtype=torch.long)
    picked = values[(steps - 1).cpu()].to(device=like.device, dtype=like.dtype)
    if picked.ndim == 0:
        return picked
    return picked.reshape(-1, *([1] * (like.ndim - 1)))


def _same_shape(a: torch.Tensor, b: torch.Tensor, key: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}", key=key)


def q_sample(x0_res: torch.Tensor, t: torch.Tensor | int, eps: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    _same_shape(x0_res, eps, "eps")
    _check_t(t, sched)
    alpha_bar = _gather(sched.alpha_bars, t, x0_res)
    return alpha_bar.sqrt() * x0_res + (1.0 - alpha_bar).sqrt() * eps


def q_posterior_mean(x0: torch.Tensor, x_t: torch.Tensor, t: int, sched: NoiseSchedule) -> torch.Tensor:
    """Mean of q(x_{t-1} | x_t, x_0) written in terms of x_0."""
    _same_shape(x0, x_t, "x_t")
    _check_t(t, sched)
    alpha_bar = float(sched.alpha_bars[t - 1])
    alpha_bar_prev = sched.alpha_bar_prev(t)
    beta = float(sched.betas[t - 1])
    alpha = float(sched.alphas[t - 1])
    coef_x0 = alpha_bar_prev**0.5 * beta / (1.0 - alpha_bar)
    coef_xt = alpha**0.5 * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
    return coef_x0 * x0 + coef_xt * x_t


def posterior_mean(x_t: torch.Tensor, eps_hat: torch.Tensor, t: torch.Tensor | int, sched: NoiseSchedule) -> torch.Tensor:
    _same_shape(x_t, eps_hat, "eps_hat")
    _check_t(t, sched)
    alpha = _gather(sched.alphas, t, x_t)
    beta = _gather(sched.betas, t, x_t)
    alpha_bar = _gather(sched.alpha_bars, t, x_t)
    return (x_t - beta / (1.0 - alpha_bar).sqrt() * eps_hat) / alpha.sqrt()


def x0_to_eps(x0_hat: torch.Tensor, x_t: torch.Tensor, t: torch.Tensor | int, sched: NoiseSchedule) -> torch.Tensor:
    _same_shape(x0_hat, x_t, "x_t")
    _check_t(t, sched)
    alpha_bar = _gather(sched.alpha_bars, t, x_t)
    if bool(torch.any(alpha_bar >= 1.0)):
        raise ScheduleError("alpha_bar equals 1 at this step; noise is unidentifiable", key="t")
    return (x_t - alpha_bar.sqrt() * x0_hat) / (1.0 - alpha_bar).sqrt()


def ddpm_step(
    x_t: torch.Tensor,
    x0_hat: torch.Tensor,
    t: int,
    sched: NoiseSchedule,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    eps_hat = x0_to_eps(x0_hat, x_t, t, sched)
    mean = posterior_mean(x_t, eps_hat, t, sched)
    if t <= 1 or noise is None:
        return mean
    _same_shape(x_t, noise, "noise")
    return mean + float(sched.posterior_variances[t - 1]) ** 0.5 * noise


def ddim_subsequence(sched: NoiseSchedule, n_steps: int) -> list[int]:
    if not 1 <= int(n_steps) <= sched.T:
        raise ScheduleError(f"n_steps must lie in [1, {sched.T}], got {n_steps}", key="schedule.sampling_steps")
    stride = sched.T // int(n_steps)
    return [1 + stride * k for k in range(int(n_steps) - 1, -1, -1)]


def ddim_step(
    x_t: torch.Tensor,
    x0_hat: torch.Tensor,
    t: int,
    t_prev: int,
    sched: NoiseSchedule,
    eta: float = 0.0,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """Move from step ``t`` to ``t_prev`` (0 means the clean sample)."""
    eps_hat = x0_to_eps(x0_hat, x_t, t, sched)
    alpha_bar = float(sched.alpha_bars[t - 1])
    alpha_bar_prev = 1.0 if t_prev <= 0 else float(sched.alpha_bars[t_prev - 1])
    sigma = 0.0
    if eta > 0.0 and t_prev > 0:
        sigma = eta * ((1.0 - alpha_bar_prev) / (1.0 - alpha_bar) * (1.0 - alpha_bar / alpha_bar_prev)) ** 0.5
    direction = max(1.0 - alpha_bar_prev - sigma**2, 0.0) ** 0.5
    x_prev = alpha_bar_prev**0.5 * x0_hat + direction * eps_hat
    if sigma > 0.0 and noise is not None:
        x_prev = x_prev + sigma * noise
    return x_prev


def residual_wrap(hrms: torch.Tensor, lrms_up: torch.Tensor) -> torch.Tensor:
    _same_shape(hrms, lrms_up, "lrms_up")
    return hrms - lrms_up


def residual_unwrap(res: torch.Tensor, lrms_up: torch.Tensor) -> torch.Tensor:
    _same_shape(res, lrms_up, "lrms_up")
    return res + lrms_up

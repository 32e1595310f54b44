import logging

import torch

from .apfm import CLEAR_MASK
from .diffusion import NoiseSchedule, ddim_step, ddim_subsequence, ddpm_step, residual_unwrap
from .errors import CheckpointError, ShapeError
from .network import SSDiffNet, build_network
from .schemas import NetworkConfig
from .training import EmaTracker

LOGGER = logging.getLogger("ssdiff.sampler")


def initial_noise(shape: tuple[int, ...], seeds: list[int], dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """One independent generator per sample so a sample's trajectory ignores its batch neighbours."""
    if len(seeds) != shape[0]:
        raise ShapeError(f"{len(seeds)} seeds for a batch of {shape[0]}", key="seeds")
    draws = [torch.randn(shape[1:], generator=torch.Generator().manual_seed(int(seed)), dtype=dtype) for seed in seeds]
    return torch.stack(draws)


@torch.no_grad()
def ddim_sample(
    model: SSDiffNet,
    pan: torch.Tensor,
    lms: torch.Tensor,
    sched: NoiseSchedule,
    n_steps: int = 100,
    x_T: torch.Tensor | None = None,
    eta: float = 0.0,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    model.eval()
    x = torch.randn(lms.shape, generator=generator, dtype=lms.dtype) if x_T is None else x_T.clone()
    x = x.to(lms.device)
    steps = ddim_subsequence(sched, n_steps)
    for index, t in enumerate(steps):
        t_prev = steps[index + 1] if index + 1 < len(steps) else 0
        t_batch = torch.full((x.shape[0],), t, dtype=torch.long, device=x.device)
        x0_hat = model(x, t_batch, pan, lms, CLEAR_MASK)
        noise = None
        if eta > 0.0 and t_prev > 0:
            noise = torch.randn(x.shape, generator=generator, dtype=x.dtype).to(x.device)
        x = ddim_step(x, x0_hat, t, t_prev, sched, eta=eta, noise=noise)
    return residual_unwrap(x, lms)


@torch.no_grad()
def ddpm_sample(
    model: SSDiffNet,
    pan: torch.Tensor,
    lms: torch.Tensor,
    sched: NoiseSchedule,
    x_T: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    model.eval()
    x = torch.randn(lms.shape, generator=generator, dtype=lms.dtype) if x_T is None else x_T.clone()
    x = x.to(lms.device)
    for t in range(sched.T, 0, -1):
        t_batch = torch.full((x.shape[0],), t, dtype=torch.long, device=x.device)
        x0_hat = model(x, t_batch, pan, lms, CLEAR_MASK)
        noise = torch.randn(x.shape, generator=generator, dtype=x.dtype).to(x.device) if t > 1 else None
        x = ddpm_step(x, x0_hat, t, sched, noise)
    return residual_unwrap(x, lms)


def model_from_checkpoint(payload: dict, cfg: NetworkConfig, use_ema: bool = True, device: str = "cpu") -> SSDiffNet:
    stored = NetworkConfig.model_validate(payload["network"])
    if stored.bands != cfg.bands or stored.variant != cfg.variant:
        raise CheckpointError(
            f"checkpoint is {stored.variant}/{stored.bands} bands, config asks for {cfg.variant}/{cfg.bands}",
            key="network",
        )
    model = build_network(stored)
    model.load_state_dict(payload["model"])
    if use_ema:
        tracker = EmaTracker(model, decay=0.0)
        tracker.load_state_dict(payload["ema"])
        tracker.apply_shadow(model)
    LOGGER.info("model_loaded variant=%s ema=%s iteration=%s", stored.variant, use_ema, payload.get("iteration"))
    return model.to(device)

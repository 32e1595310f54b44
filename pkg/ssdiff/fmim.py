"""Frequency modulation between the spatial and spectral branches."""

from dataclasses import dataclass

import torch

from .errors import ShapeError

DEFAULT_SCALE_BY_LEVEL = (1.2, 1.4, 1.6)


@dataclass(frozen=True)
class FourierMask:
    alpha: torch.Tensor
    threshold_radius: float
    low_gain: float


@dataclass(frozen=True)
class ChannelScale:
    scale_by_level: tuple[float, ...] = DEFAULT_SCALE_BY_LEVEL


def make_fourier_mask(
    height: int,
    width: int,
    threshold_radius: float = 0.25,
    low_gain: float = 0.0,
    device: torch.device | str | None = None,
    dtype: torch.dtype = torch.float32,
) -> FourierMask:
    """Radial mask over the frequency grid; radius is measured as a fraction of Nyquist (0.5 cycles/px)."""
    fy = torch.fft.fftfreq(height, dtype=torch.float64)
    fx = torch.fft.fftfreq(width, dtype=torch.float64)
    radius = torch.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2) / 0.5
    alpha = torch.ones(height, width, dtype=torch.float64)
    alpha[radius < threshold_radius] = low_gain
    return FourierMask(
        alpha=alpha.to(device=device, dtype=dtype),
        threshold_radius=float(threshold_radius),
        low_gain=float(low_gain),
    )


def identity_mask(height: int, width: int, device=None, dtype: torch.dtype = torch.float32) -> FourierMask:
    return FourierMask(alpha=torch.ones(height, width, device=device, dtype=dtype), threshold_radius=0.0, low_gain=1.0)


def high_pass(x_spa: torch.Tensor, mask: FourierMask) -> torch.Tensor:
    if tuple(mask.alpha.shape) != tuple(x_spa.shape[-2:]):
        raise ShapeError(
            f"mask {tuple(mask.alpha.shape)} does not match feature map {tuple(x_spa.shape[-2:])}",
            key="mask",
        )
    spectrum = torch.fft.fft2(x_spa, dim=(-2, -1))
    alpha = mask.alpha.to(device=x_spa.device, dtype=x_spa.dtype)
    return torch.fft.ifft2(spectrum * alpha, dim=(-2, -1)).real


def scale_channels(x_spe: torch.Tensor, cfg: ChannelScale, level: int) -> torch.Tensor:
    if not 0 <= level < len(cfg.scale_by_level):
        raise ShapeError(f"unknown level {level}", key="level")
    channels = x_spe.shape[-3]
    if channels < 2:
        raise ShapeError("scale_channels needs at least two channels", key="channels")
    half = channels // 2
    factors = torch.ones(channels, device=x_spe.device, dtype=x_spe.dtype)
    factors[:half] = cfg.scale_by_level[level]
    return x_spe * factors.reshape(-1, 1, 1)


def fmim_transfer(
    x_spa: torch.Tensor,
    x_spe: torch.Tensor,
    mask: FourierMask,
    cfg: ChannelScale,
    level: int,
) -> torch.Tensor:
    if x_spa.shape != x_spe.shape:
        raise ShapeError(f"spatial {tuple(x_spa.shape)} vs spectral {tuple(x_spe.shape)}", key="x_spe")
    return scale_channels(x_spe, cfg, level) + high_pass(x_spa, mask)

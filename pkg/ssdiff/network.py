"""Dual-branch denoiser: spatial and spectral U-Nets joined by FMIM transfers and APFM fusions."""

import logging
import math
from dataclasses import dataclass
from typing import Callable

import torch
import torch.nn.functional as F
from torch import nn

from .apfm import CLEAR_MASK, AlternatingProjectionFusion, BranchFeatures, DetachMask
from .errors import ShapeError
from .fmim import ChannelScale, FourierMask, fmim_transfer, make_fourier_mask
from .schemas import NetworkConfig

LOGGER = logging.getLogger("ssdiff.network")

# Encoder 0, encoder 1, bottleneck, decoder 1, decoder 0 -> channel-width index.
STAGE_LEVELS = (0, 1, 2, 1, 0)
DOWNSAMPLE_FACTOR = 4

Injector = Callable[[int, torch.Tensor], torch.Tensor]


@dataclass
class ConditionBundle:
    pan: torch.Tensor
    lrms_up: torch.Tensor
    x_t: torch.Tensor

    def __post_init__(self) -> None:
        if self.pan.ndim != 4 or self.pan.shape[1] != 1:
            raise ShapeError(f"pan must be (B, 1, H, W), got {tuple(self.pan.shape)}", key="pan")
        size = self.x_t.shape[-2:]
        for name in ("pan", "lrms_up"):
            if getattr(self, name).shape[-2:] != size:
                raise ShapeError(f"{name} spatial size differs from x_t", key=name)
        if self.lrms_up.shape != self.x_t.shape:
            raise ShapeError("lrms_up and x_t must share band count", key="lrms_up")


def time_embed(t: torch.Tensor | int, dim: int) -> torch.Tensor:
    if dim % 2:
        raise ShapeError(f"embedding dim must be even, got {dim}", key="dim")
    steps = torch.as_tensor(t)
    if bool((steps < 0).any()):
        raise ShapeError("timestep must be non-negative", key="t")
    steps = steps.reshape(-1).to(torch.float64)
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half).to(steps.device)
    args = steps[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class TimestepEmbedding(nn.Module):
    def __init__(self, sinusoid_dim: int, embed_dim: int) -> None:
        super().__init__()
        self.sinusoid_dim = sinusoid_dim
        self.mlp = nn.Sequential(
            nn.Linear(sinusoid_dim, embed_dim),
            nn.SiLU(),
            nn.Linear(embed_dim, embed_dim),
        )

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        weight = self.mlp[0].weight
        features = time_embed(t, self.sinusoid_dim).to(device=weight.device, dtype=weight.dtype)
        return self.mlp(features)


class ResBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, embed_dim: int, groups: int) -> None:
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, in_channels)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.emb = nn.Linear(embed_dim, out_channels)
        self.norm2 = nn.GroupNorm(groups, out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.skip = nn.Conv2d(in_channels, out_channels, 1) if in_channels != out_channels else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb(F.silu(emb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class Downsample(nn.Module):
    def __init__(self, in_channels: int, out_channels: int) -> None:
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 3, stride=2, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, in_channels: int, out_channels: int) -> None:
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class Branch(nn.Module):
    """Two-level U-Net with a strided-conv bottleneck; returns the output of each of its five stages."""

    def __init__(self, in_channels: int, cfg: NetworkConfig) -> None:
        super().__init__()
        w0, w1, w2 = cfg.widths
        n = cfg.res_blocks_per_level
        emb, groups = cfg.time_embed_dim, cfg.norm_groups
        self.time_embed = TimestepEmbedding(cfg.base_channels, emb)
        self.in_conv = nn.Conv2d(in_channels, w0, 3, padding=1)
        self.enc0 = nn.ModuleList([ResBlock(w0, w0, emb, groups) for _ in range(n)])
        self.down0 = Downsample(w0, w1)
        self.enc1 = nn.ModuleList([ResBlock(w1, w1, emb, groups) for _ in range(n)])
        self.down1 = Downsample(w1, w2)
        self.up1 = Upsample(w2, w1)
        self.dec1 = nn.ModuleList([ResBlock(2 * w1, w1, emb, groups)] + [ResBlock(w1, w1, emb, groups) for _ in range(n - 1)])
        self.up0 = Upsample(w1, w0)
        self.dec0 = nn.ModuleList([ResBlock(2 * w0, w0, emb, groups)] + [ResBlock(w0, w0, emb, groups) for _ in range(n - 1)])

    @staticmethod
    def _run(blocks: nn.ModuleList, h: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        for block in blocks:
            h = block(h, emb)
        return h

    def forward(self, x: torch.Tensor, t: torch.Tensor, inject: Injector | None = None) -> list[torch.Tensor]:
        def enter(stage: int, h: torch.Tensor) -> torch.Tensor:
            return h if inject is None else inject(stage, h)

        emb = self.time_embed(t)
        stages: list[torch.Tensor] = []
        h = self._run(self.enc0, enter(0, self.in_conv(x)), emb)
        skip0 = h
        stages.append(h)
        h = self._run(self.enc1, enter(1, self.down0(h)), emb)
        skip1 = h
        stages.append(h)
        h = enter(2, self.down1(h))
        stages.append(h)
        h = enter(3, self.up1(h))
        h = self._run(self.dec1, torch.cat([h, skip1], dim=1), emb)
        stages.append(h)
        h = enter(4, self.up0(h))
        h = self._run(self.dec0, torch.cat([h, skip0], dim=1), emb)
        stages.append(h)
        return stages


class ResidualHead(nn.Module):
    """Per-pixel MLP; the last layer starts at zero so the first prediction is the upsampled LrMSI."""

    def __init__(self, in_channels: int, hidden: int, bands: int, groups: int) -> None:
        super().__init__()
        self.norm = nn.GroupNorm(groups, in_channels)
        self.hidden = nn.Conv2d(in_channels, hidden, 1)
        self.out = nn.Conv2d(hidden, bands, 1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.out(F.silu(self.hidden(F.silu(self.norm(x)))))


class SSDiffNet(nn.Module):
    def __init__(self, cfg: NetworkConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.variant = cfg.variant
        bands = cfg.bands
        w0 = cfg.widths[0]
        coupled = 1 + 2 * bands
        self.spatial: Branch | None = None
        self.spectral: Branch | None = None
        if self.variant == "V1":
            self.spatial = Branch(coupled, cfg)
        elif self.variant == "V2":
            self.spectral = Branch(coupled, cfg)
        else:
            self.spatial = Branch(1 + bands, cfg)
            self.spectral = Branch(2 * bands, cfg)
        self.fusions = nn.ModuleList()
        if self.variant == "V5":
            self.fusions = nn.ModuleList(
                AlternatingProjectionFusion(cfg.widths[level], cfg.s_prime(level)) for level in STAGE_LEVELS
            )
        self.use_fmim = self.variant == "V5" and cfg.fmim.enabled
        self.channel_scale = ChannelScale(tuple(cfg.fmim.scale_by_level))
        head_in = 2 * w0 if self.variant == "V3" else w0
        self.head = ResidualHead(head_in, w0, bands, cfg.norm_groups)
        self._masks: dict[tuple, FourierMask] = {}

    def _fourier_mask(self, like: torch.Tensor) -> FourierMask:
        key = (like.shape[-2], like.shape[-1], like.device, like.dtype)
        if key not in self._masks:
            self._masks[key] = make_fourier_mask(
                like.shape[-2],
                like.shape[-1],
                threshold_radius=self.cfg.fmim.threshold_radius,
                low_gain=self.cfg.fmim.low_gain,
                device=like.device,
                dtype=like.dtype,
            )
        return self._masks[key]

    def _check_inputs(self, x_t: torch.Tensor, pan: torch.Tensor, lms: torch.Tensor) -> None:
        ConditionBundle(pan=pan, lrms_up=lms, x_t=x_t)
        if x_t.shape[1] != self.cfg.bands:
            raise ShapeError(f"network expects {self.cfg.bands} bands, got {x_t.shape[1]}", key="bands")
        height, width = x_t.shape[-2:]
        if height % DOWNSAMPLE_FACTOR or width % DOWNSAMPLE_FACTOR:
            raise ShapeError(
                f"spatial size {height}x{width} is not divisible by {DOWNSAMPLE_FACTOR}",
                key="size",
            )

    def spatial_features(self, pan: torch.Tensor, x_t: torch.Tensor, t: torch.Tensor) -> list[torch.Tensor]:
        return self.spatial(torch.cat([pan, x_t], dim=1), t)

    def spectral_features(
        self,
        lms: torch.Tensor,
        x_t: torch.Tensor,
        t: torch.Tensor,
        fmim_inputs: list[torch.Tensor] | None = None,
        mask: DetachMask = CLEAR_MASK,
    ) -> list[torch.Tensor]:
        if fmim_inputs is None or self.variant == "V3":
            return self.spectral(torch.cat([lms, x_t], dim=1), t)
        if len(fmim_inputs) != len(STAGE_LEVELS):
            raise ShapeError(f"expected {len(STAGE_LEVELS)} spatial stages, got {len(fmim_inputs)}", key="fmim_inputs")

        def inject(stage: int, h: torch.Tensor) -> torch.Tensor:
            f_spa = fmim_inputs[stage]
            if f_spa.shape != h.shape:
                raise ShapeError(
                    f"stage {stage}: spatial {tuple(f_spa.shape)} vs spectral {tuple(h.shape)}",
                    key="fmim_inputs",
                )
            if mask.detach_spatial_output:
                f_spa = f_spa.detach()
            if self.variant == "V4":
                return h + f_spa
            level = STAGE_LEVELS[stage]
            if self.use_fmim:
                h = fmim_transfer(f_spa, h, self._fourier_mask(h), self.channel_scale, level)
            return h + self.fusions[stage](BranchFeatures(f_spa, h, level), mask)

        return self.spectral(torch.cat([lms, x_t], dim=1), t, inject)

    def forward(
        self,
        x_t: torch.Tensor,
        t: torch.Tensor,
        pan: torch.Tensor,
        lms: torch.Tensor,
        mask: DetachMask = CLEAR_MASK,
    ) -> torch.Tensor:
        self._check_inputs(x_t, pan, lms)
        if self.variant in ("V1", "V2"):
            branch = self.spatial if self.variant == "V1" else self.spectral
            features = branch(torch.cat([pan, lms, x_t], dim=1), t)[-1]
        elif self.variant == "V3":
            spa = self.spatial_features(pan, x_t, t)[-1]
            spe = self.spectral_features(lms, x_t, t)[-1]
            features = torch.cat([spa, spe], dim=1)
        else:
            spa_stages = self.spatial_features(pan, x_t, t)
            features = self.spectral_features(lms, x_t, t, spa_stages, mask)[-1]
        return self.head(features)


def denoise(model: SSDiffNet, bundle: ConditionBundle, t: torch.Tensor, mask: DetachMask = CLEAR_MASK) -> torch.Tensor:
    """Predicted clean residual (HrMSI minus upsampled LrMSI)."""
    return model(bundle.x_t, t, bundle.pan, bundle.lrms_up, mask)


def build_network(cfg: NetworkConfig) -> SSDiffNet:
    model = SSDiffNet(cfg)
    LOGGER.info("network_built variant=%s bands=%s params=%s", cfg.variant, cfg.bands, count_parameters(model))
    return model


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def branch_parameters(model: SSDiffNet) -> dict[str, list[nn.Parameter]]:
    spatial: list[nn.Parameter] = list(model.spatial.parameters()) if model.spatial is not None else []
    spectral: list[nn.Parameter] = list(model.spectral.parameters()) if model.spectral is not None else []
    for fusion in model.fusions:
        spatial.extend(fusion.spatial_parameters())
        spectral.extend(fusion.spectral_parameters())
    if model.variant == "V1":
        spatial.extend(model.head.parameters())
    else:
        spectral.extend(model.head.parameters())
    return {"spatial": spatial, "spectral": spectral}


def apply_detach_mask(model: SSDiffNet, mask: DetachMask) -> None:
    groups = branch_parameters(model)
    for param in groups["spatial"]:
        param.requires_grad_(not mask.detach_spatial_output)
    for param in groups["spectral"]:
        param.requires_grad_(not mask.detach_spectral_output)

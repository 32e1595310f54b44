"""Alternating projection fusion: paired cross-domain attention between branch features."""

from dataclasses import dataclass, replace

import torch
from torch import nn

from .errors import NonFiniteError, ShapeError


@dataclass
class BranchFeatures:
    f_spa: torch.Tensor
    f_spe: torch.Tensor
    level: int = 0

    def __post_init__(self) -> None:
        if self.f_spa.ndim != 4 or self.f_spa.shape != self.f_spe.shape:
            raise ShapeError(
                f"branch features disagree: {tuple(self.f_spa.shape)} vs {tuple(self.f_spe.shape)}",
                key="f_spe",
            )


@dataclass
class ProjectionSet:
    t_a: torch.Tensor  # (B, HW, S')
    t_b: torch.Tensor  # (B, HW, S')
    t_c: torch.Tensor  # (B, S', HW)
    t_d: torch.Tensor  # (B, S', HW)
    s_prime: int

    @property
    def hw(self) -> int:
        return self.t_a.shape[-2]


@dataclass(frozen=True)
class DetachMask:
    detach_spatial_output: bool = False
    detach_spectral_output: bool = False

    @property
    def phase(self) -> str:
        if self.detach_spatial_output:
            return "finetune_spectral"
        if self.detach_spectral_output:
            return "finetune_spatial"
        return "joint"


CLEAR_MASK = DetachMask()


def _check_finite(*tensors: torch.Tensor) -> None:
    for tensor in tensors:
        if not bool(torch.isfinite(tensor).all()):
            raise NonFiniteError("non-finite values in projections", key="projections")


def project_spatial(p: ProjectionSet) -> torch.Tensor:
    _check_finite(p.t_a, p.t_b, p.t_c)
    logits = p.t_a @ p.t_b.transpose(-1, -2) / p.s_prime**0.5
    weights = torch.softmax(logits, dim=-1)
    return weights @ p.t_c.transpose(-1, -2)


def project_spectral(p: ProjectionSet, hw: int) -> torch.Tensor:
    _check_finite(p.t_a, p.t_c, p.t_d)
    logits = (p.t_c @ p.t_d.transpose(-1, -2)) * (hw / p.s_prime**1.5)
    weights = torch.softmax(logits, dim=-1)
    return weights @ p.t_a.transpose(-1, -2)


def fuse(t_spa: torch.Tensor, t_spe: torch.Tensor) -> torch.Tensor:
    t_spe_t = t_spe.transpose(-1, -2)
    if t_spa.shape != t_spe_t.shape:
        raise ShapeError(f"cannot fuse {tuple(t_spa.shape)} with {tuple(t_spe.shape)}", key="t_spe")
    return t_spa * t_spe_t


class AlternatingProjectionFusion(nn.Module):
    """One fusion block; ``to_a``/``to_b`` read the spatial branch, ``to_c``/``to_d`` the spectral one."""

    def __init__(self, channels: int, s_prime: int | None = None) -> None:
        super().__init__()
        s_prime = channels if s_prime is None else int(s_prime)
        if s_prime <= 0:
            raise ShapeError(f"s_prime must be positive, got {s_prime}", key="s_prime")
        self.channels = channels
        self.s_prime = s_prime
        self.to_a = nn.Conv2d(channels, s_prime, kernel_size=1)
        self.to_b = nn.Conv2d(channels, s_prime, kernel_size=1)
        self.to_c = nn.Conv2d(channels, s_prime, kernel_size=1)
        self.to_d = nn.Conv2d(channels, s_prime, kernel_size=1)
        self.to_out = nn.Conv2d(s_prime, channels, kernel_size=1) if s_prime != channels else None

    def spatial_parameters(self) -> list[nn.Parameter]:
        return [*self.to_a.parameters(), *self.to_b.parameters()]

    def spectral_parameters(self) -> list[nn.Parameter]:
        params = [*self.to_c.parameters(), *self.to_d.parameters()]
        if self.to_out is not None:
            params.extend(self.to_out.parameters())
        return params

    def make_projections(self, feats: BranchFeatures) -> ProjectionSet:
        t_a = self.to_a(feats.f_spa).flatten(2).transpose(1, 2)
        t_b = self.to_b(feats.f_spa).flatten(2).transpose(1, 2)
        t_c = self.to_c(feats.f_spe).flatten(2)
        t_d = self.to_d(feats.f_spe).flatten(2)
        return ProjectionSet(t_a=t_a, t_b=t_b, t_c=t_c, t_d=t_d, s_prime=self.s_prime)

    def forward(self, feats: BranchFeatures, mask: DetachMask = CLEAR_MASK) -> torch.Tensor:
        if mask.detach_spatial_output and mask.detach_spectral_output:
            raise ShapeError("at most one branch can be detached at a time", key="mask")
        batch, _, height, width = feats.f_spa.shape
        p = self.make_projections(feats)
        # T_c feeds T^spa and T_a feeds T^spe, so each detach also cuts the cross term.
        spatial_view = replace(p, t_c=p.t_c.detach()) if mask.detach_spectral_output else p
        spectral_view = replace(p, t_a=p.t_a.detach()) if mask.detach_spatial_output else p
        t_spa = project_spatial(spatial_view)
        t_spe = project_spectral(spectral_view, height * width)
        if mask.detach_spatial_output:
            t_spa = t_spa.detach()
        if mask.detach_spectral_output:
            t_spe = t_spe.detach()
        fused = fuse(t_spa, t_spe).transpose(1, 2).reshape(batch, self.s_prime, height, width)
        if self.to_out is not None:
            fused = self.to_out(fused)
        return fused


def apfm_forward(
    feats: BranchFeatures,
    params: AlternatingProjectionFusion,
    mask: DetachMask = CLEAR_MASK,
) -> torch.Tensor:
    return params(feats, mask)

"""Wald's-protocol simulation, polynomial up-sampling, and synthetic desk-scale scenes."""

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from pydantic import BaseModel, Field, field_validator
from scipy import ndimage

from .errors import DatasetError, ShapeError

LOGGER = logging.getLogger("ssdiff.data_pipeline")

SENSOR_PROFILES: dict[str, tuple[list[float], float]] = {
    "WV3": ([0.325, 0.355, 0.360, 0.350, 0.365, 0.360, 0.335, 0.315], 0.15),
    "WV2": ([0.35] * 7 + [0.27], 0.11),
    "QB": ([0.34, 0.32, 0.30, 0.22], 0.15),
    "GF2": ([0.30, 0.30, 0.30, 0.30], 0.15),
}

# Half of the symmetric 23-tap interpolator; even offsets vanish so original samples pass through.
_CDF23_HALF = 2.0 * np.array(
    [
        0.5,
        0.305334091185,
        0.0,
        -0.072698593239,
        0.0,
        0.021809577942,
        0.0,
        -0.005192756653,
        0.0,
        0.000807762146,
        0.0,
        -0.000060081482,
    ]
)
INTERP23_KERNEL = np.concatenate([_CDF23_HALF[:0:-1], _CDF23_HALF])
_INTERP_PAD = 12


class MtfProfile(BaseModel):
    nyquist_gains: list[float]
    pan_gain: float = Field(default=0.15, gt=0.0, lt=1.0)
    kernel_size: int = Field(default=41, ge=3)

    @field_validator("nyquist_gains")
    @classmethod
    def _check_gains(cls, value: list[float]) -> list[float]:
        if not value or any(not 0.0 < g < 1.0 for g in value):
            raise ValueError("Nyquist gains must lie in (0, 1)")
        return value

    def pan_profile(self) -> "MtfProfile":
        return MtfProfile(nyquist_gains=[self.pan_gain], pan_gain=self.pan_gain, kernel_size=self.kernel_size)


def sensor_profile(
    sensor: str,
    bands: int | None = None,
    gains: list[float] | None = None,
    pan_gain: float | None = None,
    kernel_size: int = 41,
) -> MtfProfile:
    if sensor not in SENSOR_PROFILES:
        raise DatasetError(f"unknown sensor {sensor!r}; expected one of {sorted(SENSOR_PROFILES)}", key="data.sensor")
    default_gains, default_pan = SENSOR_PROFILES[sensor]
    chosen = list(gains) if gains is not None else list(default_gains)
    if bands is not None and len(chosen) != bands:
        raise DatasetError(
            f"sensor {sensor} has {len(chosen)} MTF gains but {bands} bands were requested",
            key="data.mtf_gains",
        )
    return MtfProfile(nyquist_gains=chosen, pan_gain=pan_gain or default_pan, kernel_size=kernel_size)


def profile_from_config(data_cfg, bands: int) -> MtfProfile:
    return sensor_profile(data_cfg.sensor, bands, data_cfg.mtf_gains, data_cfg.pan_gain, data_cfg.kernel_size)


@dataclass
class SceneSample:
    pan: np.ndarray
    ms: np.ndarray
    lms: np.ndarray
    gt: np.ndarray | None = None

    @property
    def bands(self) -> int:
        return self.ms.shape[0]


def gaussian_sigma(nyquist_gain: float, factor: int = 4) -> float:
    return factor * np.sqrt(-2.0 * np.log(nyquist_gain)) / np.pi


def mtf_kernel(nyquist_gain: float, factor: int = 4, kernel_size: int = 41) -> np.ndarray:
    """Separable 1-D Gaussian whose response at the decimated Nyquist equals ``nyquist_gain``."""
    sigma = gaussian_sigma(nyquist_gain, factor)
    taps = np.arange(kernel_size, dtype=np.float64) - (kernel_size - 1) / 2.0
    kernel = np.exp(-0.5 * (taps / sigma) ** 2)
    return kernel / kernel.sum()


def mtf_filter(img: np.ndarray, profile: MtfProfile, factor: int = 4) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ShapeError(f"expected (bands, H, W), got {img.shape}", key="img")
    gains = profile.nyquist_gains
    if len(gains) == 1 and img.shape[0] > 1:
        gains = gains * img.shape[0]
    if len(gains) != img.shape[0]:
        raise ShapeError(f"{len(gains)} MTF gains for {img.shape[0]} bands", key="nyquist_gains")
    out = np.empty_like(img)
    for band, gain in enumerate(gains):
        kernel = mtf_kernel(gain, factor, profile.kernel_size)
        # scipy "reflect" is half-sample symmetric padding.
        filtered = ndimage.convolve1d(img[band], kernel, axis=0, mode="reflect")
        out[band] = ndimage.convolve1d(filtered, kernel, axis=1, mode="reflect")
    return out


def mtf_downsample(img: np.ndarray, profile: MtfProfile, factor: int = 4) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[1] % factor or img.shape[2] % factor:
        raise ShapeError(f"spatial dims of {img.shape} are not divisible by {factor}", key="img")
    phase = factor // 2
    return mtf_filter(img, profile, factor)[:, phase::factor, phase::factor]


def _interp23_double(img: np.ndarray, odd_phase: bool) -> np.ndarray:
    bands, height, width = img.shape
    grid = np.zeros((bands, 2 * height, 2 * width), dtype=np.float64)
    start = 1 if odd_phase else 0
    grid[:, start::2, start::2] = img
    grid = ndimage.correlate1d(grid, INTERP23_KERNEL, axis=1, mode="wrap")
    return ndimage.correlate1d(grid, INTERP23_KERNEL, axis=2, mode="wrap")


def upsample_poly(img: np.ndarray, factor: int = 4) -> np.ndarray:
    """×4 magnification with the 23-tap polynomial interpolator; sample i lands on pixel 4i + 2."""
    if factor != 4:
        raise ShapeError("the polynomial interpolator is defined for factor 4", key="factor")
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ShapeError(f"expected (bands, H, W), got {img.shape}", key="img")
    padded = np.pad(img, ((0, 0), (_INTERP_PAD, _INTERP_PAD), (_INTERP_PAD, _INTERP_PAD)), mode="symmetric")
    up = _interp23_double(_interp23_double(padded, odd_phase=True), odd_phase=False)
    crop = factor * _INTERP_PAD
    return up[:, crop : crop + factor * img.shape[1], crop : crop + factor * img.shape[2]]


def make_reduced(ms: np.ndarray, pan: np.ndarray, profile: MtfProfile, factor: int = 4) -> SceneSample:
    """Degrade an original (ms, pan) pair by the sensor ratio so the original ms becomes the reference."""
    ms = np.asarray(ms, dtype=np.float64)
    pan = np.asarray(pan, dtype=np.float64)
    if pan.ndim != 3 or pan.shape[0] != 1:
        raise ShapeError(f"pan must be (1, H, W), got {pan.shape}", key="pan")
    if pan.shape[1] != factor * ms.shape[1] or pan.shape[2] != factor * ms.shape[2]:
        raise ShapeError(f"pan {pan.shape} is not {factor}x ms {ms.shape}", key="pan")
    pan_low = mtf_downsample(pan, profile.pan_profile(), factor)
    ms_low = mtf_downsample(ms, profile, factor)
    lms = np.clip(upsample_poly(ms_low, factor), 0.0, 1.0)
    return SceneSample(gt=ms, pan=pan_low, ms=ms_low, lms=lms)


def make_full(ms: np.ndarray, pan: np.ndarray, factor: int = 4) -> SceneSample:
    """No-reference sample at the original scale: fusion targets pan resolution with no ground truth."""
    ms = np.asarray(ms, dtype=np.float64)
    pan = np.asarray(pan, dtype=np.float64)
    if pan.shape[1] != factor * ms.shape[1] or pan.shape[2] != factor * ms.shape[2]:
        raise ShapeError(f"pan {pan.shape} is not {factor}x ms {ms.shape}", key="pan")
    lms = np.clip(upsample_poly(ms, factor), 0.0, 1.0)
    return SceneSample(gt=None, pan=pan, ms=ms, lms=lms)


def _latent_field(rng: np.random.Generator, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    field = np.zeros_like(yy)
    for _ in range(int(rng.integers(4, 9))):
        cy, cx = rng.uniform(0.0, 1.0, size=2)
        width = rng.uniform(0.05, 0.2)
        field += rng.uniform(0.3, 1.0) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * width**2))
    for _ in range(2):
        theta = rng.uniform(0.0, 2.0 * np.pi)
        offset = rng.uniform(-0.3, 0.3)
        distance = (xx - 0.5) * np.cos(theta) + (yy - 0.5) * np.sin(theta) - offset
        field += rng.uniform(0.2, 0.5) * (distance > 0)
    return field / field.max()


def synth_original(
    seed: int | Sequence[int],
    bands: int,
    size: int,
    profile: MtfProfile,
    factor: int = 4,
    latents: int = 4,
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded original pair: ms of shape (bands, size, size), pan of shape (1, factor*size, factor*size)."""
    if size % factor:
        raise ShapeError(f"size {size} is not divisible by {factor}", key="data.size")
    rng = np.random.default_rng(seed)
    fine = size * factor
    yy, xx = np.mgrid[0:fine, 0:fine].astype(np.float64) / fine
    fields = np.stack([_latent_field(rng, yy, xx) for _ in range(latents)])
    mixing = rng.uniform(0.1, 1.0, size=(bands, latents))
    mixing /= mixing.sum(axis=1, keepdims=True)
    radiance = 0.05 + 0.9 * np.tensordot(mixing, fields, axes=1)
    weights = rng.uniform(0.5, 1.0, size=bands)
    weights /= weights.sum()
    texture = ndimage.gaussian_filter(rng.standard_normal((fine, fine)), 0.8)
    texture /= np.abs(texture).max()
    pan = np.clip(np.tensordot(weights, radiance, axes=1) + 0.03 * texture, 0.0, 1.0)[None]
    ms = mtf_downsample(radiance, profile, factor)
    return ms, pan


def synth_scene(
    seed: int | Sequence[int],
    bands: int,
    size: int,
    sensor: str = "WV3",
    profile: MtfProfile | None = None,
    factor: int = 4,
) -> SceneSample:
    profile = profile or sensor_profile(sensor, bands)
    ms, pan = synth_original(seed, bands, size, profile, factor)
    return make_reduced(ms, pan, profile, factor)


def synth_full_scene(
    seed: int | Sequence[int],
    bands: int,
    size: int,
    sensor: str = "WV3",
    profile: MtfProfile | None = None,
    factor: int = 4,
) -> SceneSample:
    """Full-resolution counterpart: ms at size/factor, pan and lms at size."""
    profile = profile or sensor_profile(sensor, bands)
    ms, pan = synth_original(seed, bands, size // factor, profile, factor)
    return make_full(ms, pan, factor)


class PansharpeningDataset(torch.utils.data.Dataset):
    """In-memory (N, C, H, W) tensors for training and sampling."""

    def __init__(self, arrays: dict[str, np.ndarray], dtype: torch.dtype = torch.float32) -> None:
        for key in ("pan", "ms", "lms"):
            if key not in arrays:
                raise DatasetError(f"missing array {key!r}", key=key)
        self.tensors = {key: torch.as_tensor(np.asarray(value), dtype=dtype) for key, value in arrays.items()}
        count = {tensor.shape[0] for tensor in self.tensors.values()}
        if len(count) != 1:
            raise DatasetError("arrays disagree on sample count", key="N")

    @property
    def has_reference(self) -> bool:
        return "gt" in self.tensors

    @property
    def bands(self) -> int:
        return self.tensors["ms"].shape[1]

    def __len__(self) -> int:
        return self.tensors["ms"].shape[0]

    def __getitem__(self, index: int) -> dict[str, torch.Tensor]:
        return {key: tensor[index] for key, tensor in self.tensors.items()}

    def batch(self, indices: torch.Tensor) -> dict[str, torch.Tensor]:
        return {key: tensor[indices] for key, tensor in self.tensors.items()}

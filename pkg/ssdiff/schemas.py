from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Variant = Literal["V1", "V2", "V3", "V4", "V5"]
Sensor = Literal["WV3", "WV2", "QB", "GF2"]

REDUCED_METRICS = ("SAM", "ERGAS", "Q2n", "SCC")
FULL_METRICS = ("D_lambda", "D_s", "HQNR")

# The shadow averages over roughly total_iters / EMA_HORIZONS steps, capped at the full-scale decay.
EMA_DECAY_CAP = 0.9999
EMA_HORIZONS = 10.0


class FmimConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    enabled: bool = True
    scale_by_level: tuple[float, float, float] = (1.2, 1.4, 1.6)
    threshold_radius: float = Field(default=0.25, ge=0.0, le=1.5)
    low_gain: float = Field(default=0.0, ge=0.0)


class NetworkConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    variant: Variant = "V5"
    bands: int = 8
    base_channels: int = Field(default=32, ge=2)
    level_multipliers: tuple[int, int, int] = (1, 2, 4)
    res_blocks_per_level: int = Field(default=2, ge=1, le=8)
    time_embed_dim: int = Field(default=64, ge=2)
    norm_groups: int = Field(default=8, ge=1)
    s_prime_per_level: tuple[int, int, int] | None = None
    fmim: FmimConfig = Field(default_factory=FmimConfig)

    @field_validator("bands")
    @classmethod
    def _check_bands(cls, value: int) -> int:
        if value not in (4, 8):
            raise ValueError("bands must be 4 or 8 (Q2n is defined for quaternion/octonion embeddings)")
        return value

    @field_validator("base_channels")
    @classmethod
    def _check_base(cls, value: int) -> int:
        if value % 2:
            raise ValueError("base_channels must be even (sinusoidal timestep features)")
        return value

    @field_validator("s_prime_per_level")
    @classmethod
    def _check_s_prime(cls, value: tuple[int, int, int] | None) -> tuple[int, int, int] | None:
        if value is not None and min(value) <= 0:
            raise ValueError("s_prime entries must be positive")
        return value

    @model_validator(mode="after")
    def _check_groups(self) -> "NetworkConfig":
        for width in self.widths:
            if width % self.norm_groups:
                raise ValueError(f"norm_groups={self.norm_groups} does not divide channel width {width}")
        return self

    @property
    def widths(self) -> tuple[int, int, int]:
        return tuple(self.base_channels * m for m in self.level_multipliers)

    def s_prime(self, level: int) -> int:
        if self.s_prime_per_level is None:
            return self.widths[level]
        return self.s_prime_per_level[level]


class ScheduleConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    steps: int = Field(default=1000, ge=2)
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sampling_steps: int = Field(default=100, ge=1)
    sampler: Literal["ddim", "ddpm"] = "ddim"
    eta: float = Field(default=0.0, ge=0.0)

    @model_validator(mode="after")
    def _check_steps(self) -> "ScheduleConfig":
        if self.sampling_steps > self.steps:
            raise ValueError("sampling_steps cannot exceed steps")
        return self


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr: float = Field(default=1e-3, gt=0.0)
    finetune_lr: float = Field(default=1e-4, gt=0.0)
    weight_decay: float = Field(default=1e-2, ge=0.0)
    batch_size: int = Field(default=12, ge=1)
    total_iters: int = Field(default=180_000, ge=1)
    finetune_iters: int = Field(default=30_000, ge=0)
    finetune_start: int | None = Field(default=None, ge=0)
    alternation_period: int | None = Field(default=None, ge=1)
    ema_decay: float | None = Field(default=None, gt=0.0, lt=1.0)
    seed: int = 0
    log_every: int = Field(default=50, ge=1)
    checkpoint_every: int = Field(default=5_000, ge=1)
    resume: str | None = None

    @model_validator(mode="after")
    def _derive_finetune(self) -> "TrainConfig":
        if self.finetune_start is None:
            if self.finetune_iters > self.total_iters:
                raise ValueError("finetune_iters cannot exceed total_iters")
            self.finetune_start = self.total_iters - self.finetune_iters
        else:
            if self.finetune_start > self.total_iters:
                raise ValueError("finetune_start must not exceed total_iters")
            self.finetune_iters = self.total_iters - self.finetune_start
        if self.alternation_period is None:
            self.alternation_period = max(1, self.finetune_iters // 6)
        if self.ema_decay is None:
            self.ema_decay = min(EMA_DECAY_CAP, max(0.5, 1.0 - EMA_HORIZONS / self.total_iters))
        return self


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sensor: Sensor = "WV3"
    train_path: str | None = None
    eval_path: str | None = None
    max_value: float | None = Field(default=None, gt=0.0)
    mtf_gains: list[float] | None = None
    pan_gain: float | None = Field(default=None, gt=0.0, lt=1.0)
    kernel_size: int = Field(default=41, ge=3)
    ratio: int = Field(default=4, ge=2)
    scenes: int = Field(default=16, ge=1)
    size: int = Field(default=64, ge=4)
    resolution: Literal["reduced", "full"] = "reduced"
    num_workers: int = Field(default=0, ge=0)

    @field_validator("mtf_gains")
    @classmethod
    def _check_gains(cls, value: list[float] | None) -> list[float] | None:
        if value is not None and any(not 0.0 < g < 1.0 for g in value):
            raise ValueError("MTF Nyquist gains must lie in (0, 1)")
        return value

    @model_validator(mode="after")
    def _check_size(self) -> "DataConfig":
        if self.size % self.ratio:
            raise ValueError(f"size must be divisible by ratio={self.ratio}")
        return self


class MetricOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: Literal["reduced", "full"] = "reduced"
    ratio: int = Field(default=4, ge=2)
    q_block: int = Field(default=32, ge=2)
    lambda_variant: Literal["interband", "khan"] = "interband"
    p: float = Field(default=1.0, gt=0.0)
    q: float = Field(default=1.0, gt=0.0)
    figures: bool = True


class AblationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    variants: list[Variant] = Field(default_factory=lambda: ["V1", "V2", "V3", "V4", "V5"])
    include_fmim_off: bool = True
    evaluate: bool = True


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    out_dir: str | None = None
    device: str | None = None
    checkpoint: str | None = None
    use_ema: bool = True
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    metrics: MetricOptions = Field(default_factory=MetricOptions)
    ablation: AblationConfig = Field(default_factory=AblationConfig)

    @property
    def seed(self) -> int:
        return self.train.seed


class MetricsReport(BaseModel):
    resolution_mode: Literal["reduced", "full"]
    per_sample: dict[str, list[float]]
    summary: dict[str, tuple[float, float]] = Field(default_factory=dict)
    lambda_variant: str | None = None

    @model_validator(mode="after")
    def _check_keys(self) -> "MetricsReport":
        expected = set(REDUCED_METRICS if self.resolution_mode == "reduced" else FULL_METRICS)
        if set(self.per_sample) != expected:
            raise ValueError(f"{self.resolution_mode} report requires exactly {sorted(expected)}")
        lengths = {len(values) for values in self.per_sample.values()}
        if len(lengths) > 1:
            raise ValueError("per-sample lists differ in length")
        if not self.summary:
            self.summary = summarize(self.per_sample)
        return self

    @property
    def sample_count(self) -> int:
        return len(next(iter(self.per_sample.values()), []))


def summarize(per_sample: dict[str, list[float]]) -> dict[str, tuple[float, float]]:
    summary: dict[str, tuple[float, float]] = {}
    for name, values in per_sample.items():
        arr = np.asarray(values, dtype=np.float64)
        if arr.size == 0:
            summary[name] = (float("nan"), float("nan"))
            continue
        summary[name] = (float(arr.mean()), float(arr.std()))
    return summary


class RunSummary(BaseModel):
    run_id: str
    variant: str | None = None
    last_iteration: int | None = None
    last_loss: float | None = None
    has_report: bool = False
    checkpoints: list[str] = Field(default_factory=list)


class TrainRecord(BaseModel):
    iteration: int
    loss: float
    lr: float
    phase: str
    created_at: str | None = None

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import torch
import torch.nn.functional as F

from .apfm import CLEAR_MASK, DetachMask
from .data_pipeline import PansharpeningDataset
from .diffusion import NoiseSchedule, DiffusionState, q_sample, residual_unwrap, residual_wrap, schedule_from_config
from .errors import CheckpointError, NonFiniteError, NonFiniteLossError, ShapeError
from .network import SSDiffNet, apply_detach_mask, build_network
from .run_store import append_train_record, checkpoint_path, load_checkpoint, save_checkpoint
from .schemas import RunConfig, TrainConfig

LOGGER = logging.getLogger("ssdiff.training")

TWO_BRANCH_VARIANTS = {"V3", "V4", "V5"}


def loss_simple(x0_hat: torch.Tensor, x0: torch.Tensor) -> torch.Tensor:
    if x0_hat.shape != x0.shape:
        raise ShapeError(f"loss inputs differ: {tuple(x0_hat.shape)} vs {tuple(x0.shape)}", key="x0")
    return F.l1_loss(x0_hat, x0)


def lbaf_schedule(iteration: int, cfg: TrainConfig) -> DetachMask:
    if cfg.finetune_iters <= 0 or iteration < cfg.finetune_start:
        return CLEAR_MASK
    window = (iteration - cfg.finetune_start) // cfg.alternation_period
    if window % 2 == 0:
        return DetachMask(detach_spatial_output=True)
    return DetachMask(detach_spectral_output=True)


def learning_rate_for(iteration: int, cfg: TrainConfig) -> float:
    if cfg.finetune_iters > 0 and iteration >= cfg.finetune_start:
        return cfg.finetune_lr
    return cfg.lr


def ema_update(
    ema_params: dict[str, torch.Tensor],
    params: dict[str, torch.Tensor],
    decay: float,
) -> dict[str, torch.Tensor]:
    if ema_params.keys() != params.keys():
        missing = sorted(set(ema_params) ^ set(params))
        raise ShapeError(f"parameter trees differ at {missing[:3]}", key="ema")
    with torch.no_grad():
        for name, value in params.items():
            shadow = ema_params[name]
            if shadow.shape != value.shape:
                raise ShapeError(f"shape mismatch for {name}", key="ema")
            shadow.mul_(decay).add_(value.detach().to(shadow.dtype), alpha=1.0 - decay)
    return ema_params


class EmaTracker:
    def __init__(self, model: torch.nn.Module, decay: float) -> None:
        self.decay = decay
        self.shadow = {name: p.detach().clone() for name, p in model.named_parameters()}

    def update(self, model: torch.nn.Module) -> None:
        ema_update(self.shadow, dict(model.named_parameters()), self.decay)

    def apply_shadow(self, model: torch.nn.Module) -> None:
        with torch.no_grad():
            for name, param in model.named_parameters():
                param.copy_(self.shadow[name])

    def state_dict(self) -> dict[str, torch.Tensor]:
        return {name: value.clone() for name, value in self.shadow.items()}

    def load_state_dict(self, state: dict[str, torch.Tensor]) -> None:
        if state.keys() != self.shadow.keys():
            raise CheckpointError("EMA namespace does not match the network", key="ema")
        for name, value in state.items():
            self.shadow[name] = value.to(self.shadow[name].device, self.shadow[name].dtype).clone()


@dataclass
class TrainState:
    model: SSDiffNet
    optimizer: torch.optim.Optimizer
    ema: EmaTracker
    generator: torch.Generator
    iteration: int = 0
    mask: DetachMask = CLEAR_MASK
    losses: list[float] = field(default_factory=list)


def init_train_state(config: RunConfig, device: str = "cpu") -> TrainState:
    torch.manual_seed(config.train.seed)
    model = build_network(config.network).to(device)
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.train.lr, weight_decay=config.train.weight_decay)
    generator = torch.Generator().manual_seed(config.train.seed)
    return TrainState(model=model, optimizer=optimizer, ema=EmaTracker(model, config.train.ema_decay), generator=generator)


def _enter_phase(state: TrainState, iteration: int, cfg: TrainConfig) -> None:
    mask = lbaf_schedule(iteration, cfg)
    if state.model.variant not in TWO_BRANCH_VARIANTS:
        mask = CLEAR_MASK
    lr = learning_rate_for(iteration, cfg)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    if mask != state.mask or iteration == 0:
        apply_detach_mask(state.model, mask)
        if mask != state.mask:
            LOGGER.info("phase_switch iteration=%s phase=%s lr=%s", iteration, mask.phase, lr)
        state.mask = mask


def sample_batch(dataset: PansharpeningDataset, batch_size: int, generator: torch.Generator) -> dict[str, torch.Tensor]:
    indices = torch.randint(0, len(dataset), (batch_size,), generator=generator)
    return dataset.batch(indices)


def train_step(
    state: TrainState,
    batch: dict[str, torch.Tensor],
    sched: NoiseSchedule,
    cfg: TrainConfig,
) -> float:
    _enter_phase(state, state.iteration, cfg)
    model = state.model
    model.train()
    device = next(model.parameters()).device
    gt = batch["gt"].to(device)
    pan = batch["pan"].to(device)
    lms = batch["lms"].to(device)
    for key, plane in (("gt", gt), ("pan", pan), ("lms", lms)):
        if not bool(torch.isfinite(plane).all()):
            raise NonFiniteLossError(f"{key} has non-finite values at iteration {state.iteration}", key="batch")
    t = torch.randint(1, sched.T + 1, (gt.shape[0],), generator=state.generator)
    eps = torch.randn(gt.shape, generator=state.generator, dtype=gt.dtype)
    diffusion = DiffusionState(x_t=torch.empty(0), t=t.to(device), epsilon=eps.to(device))
    diffusion.x_t = q_sample(residual_wrap(gt, lms), diffusion.t, diffusion.epsilon, sched)
    try:
        x0_hat = residual_unwrap(model(diffusion.x_t, diffusion.t, pan, lms, state.mask), lms)
    except NonFiniteError as exc:
        raise NonFiniteLossError(f"forward pass diverged at iteration {state.iteration}: {exc}", key="loss") from exc
    loss = loss_simple(x0_hat, gt)
    value = float(loss.detach())
    if not math.isfinite(value):
        raise NonFiniteLossError(f"loss became {value} at iteration {state.iteration}", key="loss")
    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    state.optimizer.step()
    state.ema.update(model)
    state.iteration += 1
    state.losses.append(value)
    return value


def checkpoint_payload(state: TrainState, config: RunConfig) -> dict[str, Any]:
    return {
        "model": state.model.state_dict(),
        "ema": state.ema.state_dict(),
        "optimizer": state.optimizer.state_dict(),
        "generator": state.generator.get_state(),
        "iteration": state.iteration,
        "network": config.network.model_dump(mode="json"),
        "schedule": config.schedule.model_dump(mode="json"),
    }


def restore_train_state(state: TrainState, path: str | Path, config: RunConfig) -> TrainState:
    payload = load_checkpoint(path)
    if payload.get("network") != config.network.model_dump(mode="json"):
        raise CheckpointError("checkpoint network metadata differs from config", key="network")
    state.model.load_state_dict(payload["model"])
    state.ema.load_state_dict(payload["ema"])
    state.iteration = int(payload["iteration"])
    # requires_grad must match the saved phase before the optimizer state is attached.
    state.mask = CLEAR_MASK
    _enter_phase(state, state.iteration, config.train)
    state.optimizer.load_state_dict(payload["optimizer"])
    state.generator.set_state(payload["generator"])
    LOGGER.info("resumed path=%s iteration=%s", path, state.iteration)
    return state


def run_training(
    config: RunConfig,
    dataset: PansharpeningDataset,
    run_dir: str | Path,
    device: str = "cpu",
) -> dict[str, Any]:
    cfg = config.train
    sched = schedule_from_config(config.schedule)
    state = init_train_state(config, device)
    if cfg.resume:
        restore_train_state(state, cfg.resume, config)
    run_dir = Path(run_dir)
    LOGGER.info(
        "train_start variant=%s scenes=%s total_iters=%s finetune_start=%s device=%s",
        config.network.variant,
        len(dataset),
        cfg.total_iters,
        cfg.finetune_start,
        device,
    )
    first_loss: float | None = None
    loss = float("nan")
    while state.iteration < cfg.total_iters:
        batch = sample_batch(dataset, cfg.batch_size, state.generator)
        loss = train_step(state, batch, sched, cfg)
        if first_loss is None:
            first_loss = loss
        iteration = state.iteration
        if iteration == 1 or iteration % cfg.log_every == 0 or iteration == cfg.total_iters:
            lr = state.optimizer.param_groups[0]["lr"]
            append_train_record(run_dir, iteration, loss, lr, state.mask.phase)
            LOGGER.info("train_step iteration=%s loss=%.6f lr=%s phase=%s", iteration, loss, lr, state.mask.phase)
        if iteration % cfg.checkpoint_every == 0 or iteration == cfg.total_iters:
            payload = checkpoint_payload(state, config)
            save_checkpoint(payload, checkpoint_path(run_dir, iteration))
            save_checkpoint(payload, checkpoint_path(run_dir))
    return {
        "iterations": state.iteration,
        "first_loss": first_loss,
        "final_loss": loss,
        "state": state,
    }

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import torch

from .config import LOG_LEVEL, resolve_device
from .data_pipeline import PansharpeningDataset, profile_from_config, synth_full_scene, synth_scene
from .dataset_store import load_arrays, read_fused, resolve_dataset_path, write_dataset, write_fused
from .diffusion import schedule_from_config
from .errors import CheckpointError, DatasetError, NonFiniteError, ShapeError, SSDiffError
from .figures import save_error_map, save_rgb_preview
from .metrics import build_report, format_report, full_metrics, reduced_metrics
from .network import DOWNSAMPLE_FACTOR, count_parameters
from .run_config import dump_run_config, load_run_config, validate_tree
from .run_store import CONFIG_NAME, load_checkpoint, resolve_run_dir, write_report
from .sampler import ddim_sample, ddpm_sample, initial_noise, model_from_checkpoint
from .schemas import REDUCED_METRICS, MetricsReport, RunConfig, ScheduleConfig
from .training import run_training

LOGGER = logging.getLogger("ssdiff.cli")

SAMPLES_DIR = "samples"
FUSED_NAME = "fused.h5"
EVAL_DIR = "eval"
# Per-sample noise seed = run seed * stride + sample index.
NOISE_SEED_STRIDE = 100_003


def configure_logging(level: str = LOG_LEVEL) -> None:
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )


def _prepare_run_dir(config: RunConfig, command: str) -> Path:
    run_dir = resolve_run_dir(config.out_dir)
    snapshot = run_dir / CONFIG_NAME
    if command != "train" and snapshot.exists():
        snapshot = run_dir / f"{command}_{CONFIG_NAME}"
    dump_run_config(config, snapshot)
    return run_dir


def _load_split(config: RunConfig, path: str | Path | None, split: str) -> dict[str, np.ndarray]:
    arrays = load_arrays(path, split, config.data.max_value, config.data.ratio)
    bands = arrays["ms"].shape[1]
    if bands != config.network.bands:
        raise DatasetError(f"dataset has {bands} bands, network expects {config.network.bands}", key="network.bands")
    height, width = arrays["pan"].shape[2:]
    if height % DOWNSAMPLE_FACTOR or width % DOWNSAMPLE_FACTOR:
        raise ShapeError(f"spatial size {height}x{width} is not divisible by {DOWNSAMPLE_FACTOR}", key="data.size")
    return arrays


def cmd_synth(config: RunConfig) -> Path:
    data = config.data
    bands = config.network.bands
    profile = profile_from_config(data, bands)
    make = synth_full_scene if data.resolution == "full" else synth_scene
    samples = [make([config.seed, index], bands, data.size, data.sensor, profile, data.ratio) for index in range(data.scenes)]
    if config.out_dir:
        target = Path(config.out_dir) / "train.h5"
    else:
        target = resolve_dataset_path(data.train_path, "train")
    attrs = {"sensor": data.sensor, "resolution": data.resolution, "seed": config.seed}
    write_dataset(target, samples, max_value=1.0, attrs=attrs)
    LOGGER.info("synth_done path=%s scenes=%s bands=%s size=%s", target, data.scenes, bands, data.size)
    return target


def cmd_train(config: RunConfig) -> dict[str, Any]:
    run_dir = _prepare_run_dir(config, "train")
    dataset = PansharpeningDataset(_load_split(config, config.data.train_path, "train"))
    if not dataset.has_reference:
        raise DatasetError("training needs a reduced-resolution container with gt", key="gt")
    result = run_training(config, dataset, run_dir, resolve_device(config.device))
    return {
        "run_dir": str(run_dir),
        "variant": config.network.variant,
        "parameters": count_parameters(result["state"].model),
        "iterations": result["iterations"],
        "first_loss": result["first_loss"],
        "final_loss": result["final_loss"],
    }


def _sampling_source(config: RunConfig) -> tuple[str | None, str]:
    if config.data.eval_path:
        return config.data.eval_path, "test"
    return config.data.train_path, "train"


def cmd_sample(config: RunConfig, checkpoint: str | Path | None = None) -> Path:
    run_dir = _prepare_run_dir(config, "sample")
    source = checkpoint or config.checkpoint or run_dir
    payload = load_checkpoint(source)
    stored = ScheduleConfig.model_validate(payload["schedule"])
    if (stored.steps, stored.beta_start, stored.beta_end) != (
        config.schedule.steps,
        config.schedule.beta_start,
        config.schedule.beta_end,
    ):
        raise CheckpointError("checkpoint was trained with a different noise schedule", key="schedule")
    device = resolve_device(config.device)
    model = model_from_checkpoint(payload, config.network, config.use_ema, device)
    sched = schedule_from_config(config.schedule)

    path, split = _sampling_source(config)
    arrays = _load_split(config, path, split)
    dataset = PansharpeningDataset(arrays)
    batch_size = config.train.batch_size
    outputs: list[np.ndarray] = []
    for start in range(0, len(dataset), batch_size):
        indices = torch.arange(start, min(start + batch_size, len(dataset)))
        batch = dataset.batch(indices)
        pan = batch["pan"].to(device)
        lms = batch["lms"].to(device)
        seeds = [config.seed * NOISE_SEED_STRIDE + int(index) for index in indices]
        x_T = initial_noise(tuple(lms.shape), seeds)
        generator = torch.Generator().manual_seed(seeds[0])
        if config.schedule.sampler == "ddpm":
            fused = ddpm_sample(model, pan, lms, sched, x_T=x_T, generator=generator)
        else:
            fused = ddim_sample(
                model,
                pan,
                lms,
                sched,
                config.schedule.sampling_steps,
                x_T=x_T,
                eta=config.schedule.eta,
                generator=generator,
            )
        outputs.append(fused.cpu().numpy())
        LOGGER.info("sample_batch start=%s size=%s sampler=%s", start, len(indices), config.schedule.sampler)

    attrs = {
        "checkpoint": str(source),
        "iteration": int(payload["iteration"]),
        "sampler": config.schedule.sampler,
        "sampling_steps": config.schedule.sampling_steps,
        "eta": config.schedule.eta,
        "use_ema": config.use_ema,
        "seed": config.seed,
    }
    return write_fused(run_dir / SAMPLES_DIR / FUSED_NAME, np.concatenate(outputs), inputs=arrays, attrs=attrs)


def _reference_arrays(config: RunConfig, fused_file: Path) -> dict[str, np.ndarray]:
    if config.data.eval_path:
        return _load_split(config, config.data.eval_path, "test")
    return load_arrays(fused_file, max_value=1.0, ratio=config.data.ratio)


def _score(config: RunConfig, fused: np.ndarray, refs: dict[str, np.ndarray]) -> list[dict[str, float]]:
    opts = config.metrics
    if opts.mode == "reduced":
        if "gt" not in refs:
            raise DatasetError("reduced-resolution evaluation needs gt", key="gt")
        score = lambda i: reduced_metrics(fused[i], refs["gt"][i], opts)  # noqa: E731
    else:
        profile = profile_from_config(config.data, fused.shape[1])
        score = lambda i: full_metrics(fused[i], refs["ms"][i], refs["pan"][i], profile, refs["lms"][i], opts)  # noqa: E731
    indices = range(len(fused))
    if config.data.num_workers > 1:
        with ThreadPoolExecutor(max_workers=config.data.num_workers) as pool:
            return list(pool.map(score, indices))
    return [score(i) for i in indices]


def cmd_eval(config: RunConfig, fused_dir: str | Path | None = None) -> MetricsReport:
    run_dir = _prepare_run_dir(config, "eval")
    source = Path(fused_dir) if fused_dir else run_dir / SAMPLES_DIR
    fused_file = source / FUSED_NAME if source.is_dir() else source
    fused = read_fused(fused_file)
    refs = _reference_arrays(config, fused_file)
    if len(refs["ms"]) != len(fused) or refs["lms"].shape[1:] != fused.shape[1:]:
        raise DatasetError(
            f"fused {fused.shape} is not aligned with reference lms {refs['lms'].shape}",
            key="fused",
        )
    mode = config.metrics.mode
    rows = _score(config, fused, refs)
    report = build_report(rows, mode, config.metrics.lambda_variant if mode == "full" else None)
    write_report(run_dir, report)
    (run_dir / EVAL_DIR / "report.txt").write_text(format_report(report), encoding="utf-8")

    if config.metrics.figures:
        figures = run_dir / EVAL_DIR / "figures"
        for index in range(len(fused)):
            save_rgb_preview(fused[index], figures / f"fused_{index:03d}.png", title=f"sample {index}")
            if "gt" in refs:
                save_error_map(fused[index], refs["gt"][index], figures / f"error_{index:03d}.png")
    LOGGER.info("eval_done mode=%s samples=%s run_dir=%s", mode, len(fused), run_dir)
    return report


def _ablation_runs(config: RunConfig) -> list[tuple[str, str, bool]]:
    runs = [(variant, variant, config.network.fmim.enabled) for variant in config.ablation.variants]
    if config.ablation.include_fmim_off:
        runs.append(("V5-noFMIM", "V5", False))
    return runs


def format_ablation(rows: list[dict[str, Any]]) -> str:
    columns = ["variant", "parameters", "first_loss", "final_loss", *REDUCED_METRICS]
    lines = ["\t".join(columns)]
    for row in rows:
        cells = []
        for column in columns:
            value = row.get(column)
            if isinstance(value, float):
                cells.append(f"{value:.6f}")
            else:
                cells.append("-" if value is None else str(value))
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def cmd_ablate(config: RunConfig) -> list[dict[str, Any]]:
    base = _prepare_run_dir(config, "ablate")
    rows: list[dict[str, Any]] = []
    for name, variant, fmim_enabled in _ablation_runs(config):
        tree = config.model_dump(mode="json")
        tree["network"]["variant"] = variant
        tree["network"]["fmim"]["enabled"] = fmim_enabled
        tree["out_dir"] = str(base / name)
        tree["checkpoint"] = None
        tree["metrics"]["mode"] = "reduced"
        run = validate_tree(tree)
        LOGGER.info("ablate_run name=%s variant=%s fmim=%s", name, variant, fmim_enabled)
        summary = cmd_train(run)
        row: dict[str, Any] = {
            "variant": name,
            "parameters": summary["parameters"],
            "first_loss": summary["first_loss"],
            "final_loss": summary["final_loss"],
        }
        if config.ablation.evaluate:
            cmd_sample(run)
            report = cmd_eval(run)
            row.update({metric: report.summary[metric][0] for metric in REDUCED_METRICS})
        rows.append(row)
    (base / "ablation.json").write_text(json.dumps(rows, indent=2), encoding="utf-8")
    (base / "ablation.txt").write_text(format_ablation(rows), encoding="utf-8")
    return rows


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="YAML run config")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="dotted config override, repeatable (e.g. train.total_iters=2000)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssdiff", description="Spatial-spectral diffusion pansharpening")
    commands = parser.add_subparsers(dest="command", required=True)
    _add_common(commands.add_parser("synth", help="write a synthetic Wald's-protocol dataset"))
    _add_common(commands.add_parser("train", help="train a denoiser, including branch-alternating fine-tuning"))
    sample = commands.add_parser("sample", help="fuse a dataset with a trained checkpoint")
    _add_common(sample)
    sample.add_argument("--checkpoint", default=None, help="checkpoint file or run directory")
    sample.add_argument("--raw-weights", action="store_true", help="use raw instead of EMA weights")
    evaluate = commands.add_parser("eval", help="score fused outputs and emit figures")
    _add_common(evaluate)
    evaluate.add_argument("--fused-dir", default=None, help="directory or file holding fused.h5")
    _add_common(commands.add_parser("ablate", help="train and score each ablation variant"))
    return parser


def _dispatch(args: argparse.Namespace, config: RunConfig) -> Any:
    handlers: dict[str, Callable[[], Any]] = {
        "synth": lambda: str(cmd_synth(config)),
        "train": lambda: cmd_train(config),
        "sample": lambda: str(cmd_sample(config, args.checkpoint)),
        "eval": lambda: cmd_eval(config, args.fused_dir).model_dump(mode="json")["summary"],
        "ablate": lambda: cmd_ablate(config),
    }
    return handlers[args.command]()


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    overrides = list(args.override or [])
    if getattr(args, "raw_weights", False):
        overrides.append("use_ema=false")
    try:
        config = load_run_config(args.config, overrides, args.seed, args.out)
        result = _dispatch(args, config)
    except NonFiniteError as exc:
        print(f"error: {exc.diagnostic()}", file=sys.stderr)
        return 1
    except SSDiffError as exc:
        print(f"error: {exc.diagnostic()}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: io: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2, default=str))
    return 0

import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import torch
import yaml

from .config import RUNS_ROOT
from .errors import CheckpointError
from .schemas import MetricsReport, RunSummary

LOGGER = logging.getLogger("ssdiff.run_store")

DEFAULT_RUN_ID = "default"
CONFIG_NAME = "config.yaml"
LOG_NAME = "train_log.jsonl"
CHECKPOINT_DIR = "checkpoints"
REPORT_JSON = Path("eval") / "report.json"


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def normalize_run_id(run_id: str | None) -> str:
    raw = str(run_id or "").strip()
    if not raw:
        return DEFAULT_RUN_ID
    cleaned = "".join(ch for ch in raw if ch.isalnum() or ch in ("-", "_", "."))
    cleaned = cleaned[:64].strip(".")
    return cleaned or DEFAULT_RUN_ID


def run_dir_for(run_id: str | None, root: Path | None = None) -> Path:
    return (root or RUNS_ROOT) / normalize_run_id(run_id)


def resolve_run_dir(out_dir: str | Path | None) -> Path:
    if out_dir is None or not str(out_dir).strip():
        stamp = datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%S")
        target = RUNS_ROOT / f"run-{stamp}"
    else:
        target = Path(str(out_dir).strip()).expanduser()
    target.mkdir(parents=True, exist_ok=True)
    return target


def append_train_record(run_dir: str | Path, iteration: int, loss: float, lr: float, phase: str) -> dict[str, Any]:
    record = {
        "iteration": int(iteration),
        "loss": float(loss),
        "lr": float(lr),
        "phase": phase,
        "created_at": _utc_now(),
    }
    target = Path(run_dir) / LOG_NAME
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("a", encoding="utf-8") as handle:
        handle.write(json.dumps(record) + "\n")
    return record


def read_train_records(run_dir: str | Path, limit: int | None = None) -> list[dict[str, Any]]:
    source = Path(run_dir) / LOG_NAME
    if not source.exists():
        return []
    records: list[dict[str, Any]] = []
    for line in source.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            LOGGER.warning("train_log_skip run_dir=%s reason=corrupt_line", run_dir)
    if isinstance(limit, int) and limit > 0:
        return records[-limit:]
    return records


def checkpoint_path(run_dir: str | Path, iteration: int | None = None) -> Path:
    name = "last.pt" if iteration is None else f"ckpt_{int(iteration):07d}.pt"
    return Path(run_dir) / CHECKPOINT_DIR / name


def save_checkpoint(payload: dict[str, Any], path: str | Path) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    staging = target.with_suffix(target.suffix + ".tmp")
    torch.save(payload, staging)
    staging.replace(target)
    LOGGER.debug("checkpoint_saved path=%s iteration=%s", target, payload.get("iteration"))
    return target


def load_checkpoint(path: str | Path) -> dict[str, Any]:
    source = Path(path)
    if source.is_dir():
        source = checkpoint_path(source)
    if not source.exists():
        raise CheckpointError(f"checkpoint not found: {source}", key="checkpoint")
    payload = torch.load(source, map_location="cpu", weights_only=False)
    for key in ("model", "ema", "network", "schedule", "iteration"):
        if key not in payload:
            raise CheckpointError(f"checkpoint lacks {key!r}", key=key)
    return payload


def list_checkpoints(run_dir: str | Path) -> list[str]:
    folder = Path(run_dir) / CHECKPOINT_DIR
    if not folder.exists():
        return []
    return sorted(path.name for path in folder.glob("*.pt"))


def write_report(run_dir: str | Path, report: MetricsReport) -> Path:
    target = Path(run_dir) / REPORT_JSON
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(report.model_dump_json(indent=2), encoding="utf-8")
    return target


def read_report(run_dir: str | Path) -> MetricsReport | None:
    source = Path(run_dir) / REPORT_JSON
    if not source.exists():
        return None
    return MetricsReport.model_validate_json(source.read_text(encoding="utf-8"))


def read_config_text(run_dir: str | Path) -> str | None:
    source = Path(run_dir) / CONFIG_NAME
    if not source.exists():
        return None
    return source.read_text(encoding="utf-8")


def summarize_run(run_dir: str | Path) -> RunSummary:
    run_dir = Path(run_dir)
    records = read_train_records(run_dir, limit=1)
    last = records[-1] if records else {}
    variant = None
    config_text = read_config_text(run_dir)
    if config_text:
        try:
            tree = yaml.safe_load(config_text) or {}
        except yaml.YAMLError:
            tree = {}
        network = tree.get("network") if isinstance(tree, dict) else None
        if isinstance(network, dict):
            variant = network.get("variant")
    return RunSummary(
        run_id=run_dir.name,
        variant=variant,
        last_iteration=last.get("iteration"),
        last_loss=last.get("loss"),
        has_report=(run_dir / REPORT_JSON).exists(),
        checkpoints=list_checkpoints(run_dir),
    )


def list_runs(root: Path | None = None) -> list[RunSummary]:
    base = root or RUNS_ROOT
    if not base.exists():
        return []
    runs = [path for path in sorted(base.iterdir()) if path.is_dir() and (path / CONFIG_NAME).exists()]
    return [summarize_run(path) for path in runs]

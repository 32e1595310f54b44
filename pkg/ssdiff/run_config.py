import json
import logging
from pathlib import Path
from typing import Any

import yaml
from pydantic import ValidationError

from .errors import ConfigError
from .schemas import RunConfig

LOGGER = logging.getLogger("ssdiff.run_config")


def _read_tree(path: str | Path | None) -> dict[str, Any]:
    if path is None:
        return {}
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError(f"config file not found: {config_path}", key="--config")
    try:
        tree = yaml.safe_load(config_path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"unparseable config: {exc}", key="--config") from exc
    if tree is None:
        return {}
    if not isinstance(tree, dict):
        raise ConfigError("config root must be a mapping", key="--config")
    return tree


def parse_override(raw: str) -> tuple[str, Any]:
    if "=" not in raw:
        raise ConfigError(f"override must look like key=value, got {raw!r}", key="--override")
    key, _, value = raw.partition("=")
    key = key.strip()
    if not key or any(not part for part in key.split(".")):
        raise ConfigError(f"malformed override key {key!r}", key="--override")
    try:
        parsed = yaml.safe_load(value) if value.strip() else None
    except yaml.YAMLError:
        parsed = value
    return key, parsed


def apply_overrides(tree: dict[str, Any], overrides: list[str] | None) -> dict[str, Any]:
    for raw in overrides or []:
        key, value = parse_override(raw)
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = {}
                node[part] = child
            if not isinstance(child, dict):
                raise ConfigError(f"cannot descend into non-mapping value at {part!r}", key=key)
            node = child
        node[parts[-1]] = value
    return tree


def validate_tree(tree: dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(tree)
    except ValidationError as exc:
        first = exc.errors()[0]
        key = ".".join(str(part) for part in first.get("loc", ())) or "config"
        raise ConfigError(first.get("msg", "invalid value"), key=key) from exc


def load_run_config(
    path: str | Path | None = None,
    overrides: list[str] | None = None,
    seed: int | None = None,
    out_dir: str | None = None,
) -> RunConfig:
    tree = apply_overrides(_read_tree(path), overrides)
    if seed is not None:
        tree.setdefault("train", {})
        tree["train"]["seed"] = seed
    if out_dir is not None:
        tree["out_dir"] = out_dir
    config = validate_tree(tree)
    LOGGER.debug("config_loaded path=%s overrides=%s", path, len(overrides or []))
    return config


def dump_run_config(config: RunConfig, path: str | Path) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    payload = json.loads(config.model_dump_json())
    target.write_text(yaml.safe_dump(payload, sort_keys=False), encoding="utf-8")
    return target

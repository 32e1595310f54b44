import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

BASE_DIR = Path(__file__).resolve().parents[1]

SSDIFF_DATA_ROOT = os.getenv("SSDIFF_DATA_ROOT")
SSDIFF_RUNS_ROOT = os.getenv("SSDIFF_RUNS_ROOT")
SSDIFF_DEVICE = os.getenv("SSDIFF_DEVICE")
LOG_LEVEL = (os.getenv("SSDIFF_LOG_LEVEL") or "INFO").strip().upper()

# 11-bit sensors (WV3, QB, GF2).
SENSOR_MAX_VALUE = 2047.0


_FLAG_WORDS = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _env_flag(name: str, default: bool) -> bool:
    """Unset or unrecognised values fall back to ``default``."""
    return _FLAG_WORDS.get((os.getenv(name) or "").strip().lower(), default)


def _env_path(raw: str | None, default: Path) -> Path:
    if isinstance(raw, str) and raw.strip():
        return Path(raw.strip()).expanduser()
    return default


DATA_ROOT = _env_path(SSDIFF_DATA_ROOT, BASE_DIR / "data")
RUNS_ROOT = _env_path(SSDIFF_RUNS_ROOT, BASE_DIR / "runs")
RUN_SLOW_TESTS = _env_flag("SSDIFF_RUN_SLOW", False)


def resolve_device(requested: str | None = None) -> str:
    choice = requested or SSDIFF_DEVICE
    if isinstance(choice, str) and choice.strip() and choice.strip().lower() != "auto":
        return choice.strip()
    import torch

    return "cuda" if torch.cuda.is_available() else "cpu"

import logging
from pathlib import Path
from typing import Iterator

import h5py
import numpy as np

from .config import DATA_ROOT, SENSOR_MAX_VALUE
from .data_pipeline import SceneSample
from .errors import DatasetError

LOGGER = logging.getLogger("ssdiff.dataset_store")

REQUIRED_KEYS = ("lms", "ms", "pan")
ALL_KEYS = ("gt", "lms", "ms", "pan")


def resolve_dataset_path(path: str | Path | None, split: str = "train") -> Path:
    if path is None or not str(path).strip():
        candidate = DATA_ROOT / f"{split}.h5"
    else:
        candidate = Path(str(path).strip()).expanduser()
        if not candidate.is_absolute() and not candidate.exists():
            candidate = DATA_ROOT / candidate
    if candidate.is_dir():
        candidate = candidate / f"{split}.h5"
    return candidate


def _check_layout(arrays: dict[str, tuple[int, ...]], ratio: int) -> None:
    for key in REQUIRED_KEYS:
        if key not in arrays:
            raise DatasetError(f"container is missing dataset {key!r}", key=key)
    for key, shape in arrays.items():
        if len(shape) != 4:
            raise DatasetError(f"{key} must be (N, C, H, W), got {shape}", key=key)
    count = arrays["ms"][0]
    bands = arrays["ms"][1]
    height, width = arrays["pan"][2:]
    for key, shape in arrays.items():
        if shape[0] != count:
            raise DatasetError(f"{key} holds {shape[0]} samples, ms holds {count}", key=key)
    if arrays["pan"][1] != 1:
        raise DatasetError("pan must have exactly one band", key="pan")
    if arrays["lms"][1:] != (bands, height, width):
        raise DatasetError(f"lms {arrays['lms']} disagrees with pan/ms", key="lms")
    if "gt" in arrays and arrays["gt"][1:] != (bands, height, width):
        raise DatasetError(f"gt {arrays['gt']} disagrees with lms", key="gt")
    if arrays["ms"][2:] != (height // ratio, width // ratio) or height % ratio or width % ratio:
        raise DatasetError(f"ms {arrays['ms']} is not 1/{ratio} of pan {arrays['pan']}", key="ms")


def _scale_for(handle: h5py.File, max_value: float | None) -> float:
    if max_value is not None:
        return float(max_value)
    stored = handle.attrs.get("max_value")
    if stored is not None:
        return float(stored)
    return SENSOR_MAX_VALUE


def load_arrays(
    path: str | Path,
    split: str = "train",
    max_value: float | None = None,
    ratio: int = 4,
) -> dict[str, np.ndarray]:
    source = resolve_dataset_path(path, split)
    if not source.exists():
        raise DatasetError(f"dataset not found: {source}", key="path")
    with h5py.File(source, "r") as handle:
        shapes = {key: tuple(handle[key].shape) for key in ALL_KEYS if key in handle}
        _check_layout(shapes, ratio)
        scale = _scale_for(handle, max_value)
        arrays = {key: np.asarray(handle[key][...], dtype=np.float32) / scale for key in shapes}
    LOGGER.info("dataset_loaded path=%s split=%s samples=%s scale=%s", source, split, shapes["ms"][0], scale)
    return arrays


def load_dataset(
    path: str | Path,
    split: str = "train",
    max_value: float | None = None,
    ratio: int = 4,
) -> Iterator[SceneSample]:
    """Stream samples from a gt/lms/ms/pan container; layout is validated before the first yield."""
    source = resolve_dataset_path(path, split)
    if not source.exists():
        raise DatasetError(f"dataset not found: {source}", key="path")
    handle = h5py.File(source, "r")
    try:
        shapes = {key: tuple(handle[key].shape) for key in ALL_KEYS if key in handle}
        _check_layout(shapes, ratio)
        scale = _scale_for(handle, max_value)
    except Exception:
        handle.close()
        raise

    def _stream() -> Iterator[SceneSample]:
        with handle:
            for index in range(shapes["ms"][0]):
                planes = {key: np.asarray(handle[key][index], dtype=np.float64) / scale for key in shapes}
                yield SceneSample(gt=planes.get("gt"), pan=planes["pan"], ms=planes["ms"], lms=planes["lms"])

    return _stream()


def write_dataset(
    path: str | Path,
    samples: list[SceneSample],
    max_value: float = 1.0,
    attrs: dict[str, object] | None = None,
) -> Path:
    if not samples:
        raise DatasetError("no samples to write", key="samples")
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        with h5py.File(target, "w") as handle:
            handle.attrs["max_value"] = float(max_value)
            for key, value in (attrs or {}).items():
                handle.attrs[key] = value
            for key in ALL_KEYS:
                planes = [getattr(sample, key) for sample in samples]
                if any(plane is None for plane in planes):
                    continue
                handle.create_dataset(key, data=np.stack(planes).astype(np.float32))
    except OSError as exc:
        raise DatasetError(f"cannot write {target}: {exc}", key="out") from exc
    LOGGER.info("dataset_written path=%s samples=%s", target, len(samples))
    return target


def write_fused(
    path: str | Path,
    fused: np.ndarray,
    inputs: dict[str, np.ndarray] | None = None,
    attrs: dict[str, object] | None = None,
) -> Path:
    """Fused outputs plus the normalized inputs they were produced from, aligned by index."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with h5py.File(target, "w") as handle:
        handle.attrs["max_value"] = 1.0
        for key, value in (attrs or {}).items():
            handle.attrs[key] = value
        handle.create_dataset("fused", data=np.asarray(fused, dtype=np.float32))
        for key, value in (inputs or {}).items():
            handle.create_dataset(key, data=np.asarray(value, dtype=np.float32))
    LOGGER.info("fused_written path=%s samples=%s", target, len(fused))
    return target


def read_fused(path: str | Path) -> np.ndarray:
    source = Path(path)
    if source.is_dir():
        source = source / "fused.h5"
    if not source.exists():
        raise DatasetError(f"fused outputs not found: {source}", key="fused_dir")
    with h5py.File(source, "r") as handle:
        if "fused" not in handle:
            raise DatasetError("container has no 'fused' dataset", key="fused")
        return np.asarray(handle["fused"][...], dtype=np.float64)

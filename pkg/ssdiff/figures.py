from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import ShapeError  # noqa: E402


def rgb_bands(bands: int) -> tuple[int, int, int]:
    if bands == 8:
        return (4, 2, 1)
    if bands == 4:
        return (2, 1, 0)
    raise ShapeError(f"no RGB triplet for {bands} bands", key="bands")


def _stretch(rgb: np.ndarray, low: float = 1.0, high: float = 99.0) -> np.ndarray:
    out = np.empty_like(rgb)
    for channel in range(rgb.shape[-1]):
        lo, hi = np.percentile(rgb[..., channel], [low, high])
        span = hi - lo if hi > lo else 1.0
        out[..., channel] = np.clip((rgb[..., channel] - lo) / span, 0.0, 1.0)
    return out


def save_rgb_preview(image: np.ndarray, path: str | Path, title: str | None = None) -> Path:
    image = np.asarray(image, dtype=np.float64)
    rgb = np.stack([image[band] for band in rgb_bands(image.shape[0])], axis=-1)
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(3, 3))
    ax.imshow(_stretch(rgb))
    ax.set_axis_off()
    if title:
        ax.set_title(title, fontsize=8)
    fig.savefig(target, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return target


def save_error_map(pred: np.ndarray, gt: np.ndarray, path: str | Path, vmax: float | None = None) -> Path:
    error = np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)).mean(axis=0)
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(3.4, 3))
    shown = ax.imshow(error, cmap="jet", vmin=0.0, vmax=vmax or max(float(error.max()), 1e-12))
    ax.set_axis_off()
    fig.colorbar(shown, ax=ax, fraction=0.046, pad=0.04)
    fig.savefig(target, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return target

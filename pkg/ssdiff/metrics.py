"""Reduced- and full-resolution pansharpening quality indices over (bands, H, W) planes."""

import logging

import numpy as np
from scipy import signal

from .data_pipeline import MtfProfile, mtf_downsample, mtf_filter
from .errors import MetricError
from .schemas import FULL_METRICS, REDUCED_METRICS, MetricOptions, MetricsReport

LOGGER = logging.getLogger("ssdiff.metrics")

LAPLACIAN = np.array([[-1.0, -1.0, -1.0], [-1.0, 8.0, -1.0], [-1.0, -1.0, -1.0]])


def _planes(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise MetricError(f"shape mismatch {p.shape} vs {g.shape}", key="pred")
    if p.ndim != 3:
        raise MetricError(f"expected (bands, H, W), got {p.shape}", key="pred")
    return p, g


def sam(pred: np.ndarray, gt: np.ndarray) -> float:
    p, g = _planes(pred, gt)
    if p.shape[0] < 2:
        raise MetricError("SAM needs at least two bands", key="bands")
    p_norm = np.sqrt((p**2).sum(axis=0))
    g_norm = np.sqrt((g**2).sum(axis=0))
    valid = (p_norm > 0) & (g_norm > 0)
    if not valid.any():
        raise MetricError("every pixel has a zero spectrum", key="pred")
    p_unit = p[:, valid] / p_norm[valid]
    g_unit = g[:, valid] / g_norm[valid]
    diff = np.sqrt(((p_unit - g_unit) ** 2).sum(axis=0))
    total = np.sqrt(((p_unit + g_unit) ** 2).sum(axis=0))
    angles = 2.0 * np.arctan2(diff, total)
    return float(np.degrees(angles).mean())


def ergas(pred: np.ndarray, gt: np.ndarray, ratio: int = 4) -> float:
    p, g = _planes(pred, gt)
    means = g.reshape(g.shape[0], -1).mean(axis=1)
    if np.any(means == 0):
        raise MetricError("a reference band has zero mean", key="gt")
    rmse = np.sqrt(((p - g) ** 2).reshape(p.shape[0], -1).mean(axis=1))
    return float(100.0 / ratio * np.sqrt(np.mean((rmse / means) ** 2)))


def scc(pred: np.ndarray, gt: np.ndarray) -> float:
    p, g = _planes(pred, gt)
    scores = []
    for band in range(p.shape[0]):
        hp = signal.convolve2d(p[band], LAPLACIAN, mode="valid").ravel()
        hg = signal.convolve2d(g[band], LAPLACIAN, mode="valid").ravel()
        hp = hp - hp.mean()
        hg = hg - hg.mean()
        denom = np.sqrt((hp**2).sum() * (hg**2).sum())
        if denom == 0:
            raise MetricError(f"high-pass signal of band {band} has zero variance", key="pred")
        scores.append((hp * hg).sum() / denom)
    return float(np.mean(scores))


def _tiles(img: np.ndarray, block: int) -> np.ndarray:
    """Non-overlapping block views (tiles, block*block); the whole image when it is smaller than a block."""
    height, width = img.shape
    if block >= min(height, width):
        return img.reshape(1, -1)
    rows, cols = height // block, width // block
    cropped = img[: rows * block, : cols * block]
    return cropped.reshape(rows, block, cols, block).transpose(0, 2, 1, 3).reshape(rows * cols, -1)


def q_index(x: np.ndarray, y: np.ndarray, block: int = 32) -> float:
    """Universal image quality index with zero stabilizers, averaged over tiles with defined values."""
    tx = _tiles(np.asarray(x, dtype=np.float64), block)
    ty = _tiles(np.asarray(y, dtype=np.float64), block)
    mx, my = tx.mean(axis=1), ty.mean(axis=1)
    vx = ((tx - mx[:, None]) ** 2).mean(axis=1)
    vy = ((ty - my[:, None]) ** 2).mean(axis=1)
    cxy = ((tx - mx[:, None]) * (ty - my[:, None])).mean(axis=1)
    denom = (vx + vy) * (mx**2 + my**2)
    valid = denom > 0
    if not valid.any():
        raise MetricError("Q index undefined: every tile has zero variance or zero mean", key="block")
    return float(np.mean(4.0 * cxy[valid] * mx[valid] * my[valid] / denom[valid]))


def _conj(x: np.ndarray) -> np.ndarray:
    return np.concatenate([x[..., :1], -x[..., 1:]], axis=-1)


def onion_mult(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cayley-Dickson product over the last axis (2, 4 or 8 components), toolbox conjugation convention."""
    n = a.shape[-1]
    if n == 1:
        return a * b
    half = n // 2
    p, q = a[..., :half], _conj(a[..., half:])
    r, s = b[..., :half], _conj(b[..., half:])
    if n == 2:
        return np.concatenate([p * r - s * q, p * s + r * q], axis=-1)
    first = onion_mult(p, r) - onion_mult(s, _conj(q))
    second = onion_mult(_conj(p), s) + onion_mult(r, q)
    return np.concatenate([first, second], axis=-1)


def _onion_quality(ref: np.ndarray, test: np.ndarray) -> float | None:
    """Hypercomplex Q for one block; inputs are (pixels, bands)."""
    if np.all(ref.std(axis=0) == 0) and np.all(test.std(axis=0) == 0):
        return None
    count = ref.shape[0]
    mean = ref.mean(axis=0)
    std = ref.std(axis=0, ddof=1)
    std = np.where(std == 0, 1.0, std)
    x = (ref - mean) / std + 1.0
    y = _conj((test - mean) / std + 1.0)
    m1, m2 = x.mean(axis=0), y.mean(axis=0)
    mod_m1_sq, mod_m2_sq = (m1**2).sum(), (m2**2).sum()
    unbias = count / (count - 1.0)
    variance_sum = unbias * ((x**2).sum(axis=1).mean() + (y**2).sum(axis=1).mean()) - unbias * (mod_m1_sq + mod_m2_sq)
    if variance_sum <= 0 or mod_m1_sq + mod_m2_sq == 0:
        return None
    mean_bias = 2.0 * np.sqrt(mod_m1_sq * mod_m2_sq) / (mod_m1_sq + mod_m2_sq)
    covariance = unbias * onion_mult(x, y).mean(axis=0) - unbias * onion_mult(m1, m2)
    q = covariance * mean_bias * (2.0 / variance_sum)
    return float(np.sqrt((q**2).sum()))


def q2n(pred: np.ndarray, gt: np.ndarray, block: int = 32, shift: int | None = None) -> float:
    p, g = _planes(pred, gt)
    bands, height, width = g.shape
    if bands not in (4, 8):
        raise MetricError(f"Q2n supports 4 or 8 bands, got {bands}", key="bands")
    if block > min(height, width):
        raise MetricError(f"block {block} exceeds image size {height}x{width}", key="block")
    shift = shift or block
    pad_h = (-(height - block)) % shift
    pad_w = (-(width - block)) % shift
    if pad_h or pad_w:
        pad = ((0, 0), (0, pad_h), (0, pad_w))
        p = np.pad(p, pad, mode="symmetric")
        g = np.pad(g, pad, mode="symmetric")
    scores = []
    for top in range(0, g.shape[1] - block + 1, shift):
        for left in range(0, g.shape[2] - block + 1, shift):
            ref = g[:, top : top + block, left : left + block].reshape(bands, -1).T
            test = p[:, top : top + block, left : left + block].reshape(bands, -1).T
            value = _onion_quality(ref, test)
            if value is not None:
                scores.append(value)
    if not scores:
        raise MetricError("Q2n undefined: every block has zero variance", key="block")
    return float(np.mean(scores))


def _check_full(fused: np.ndarray, ms: np.ndarray, ratio: int) -> tuple[np.ndarray, np.ndarray]:
    f = np.asarray(fused, dtype=np.float64)
    m = np.asarray(ms, dtype=np.float64)
    if f.ndim != 3 or m.ndim != 3 or f.shape[0] != m.shape[0]:
        raise MetricError(f"fused {f.shape} and ms {m.shape} disagree", key="ms")
    if f.shape[1] != ratio * m.shape[1] or f.shape[2] != ratio * m.shape[2]:
        raise MetricError(f"fused {f.shape} is not {ratio}x ms {m.shape}", key="ms")
    return f, m


def d_lambda(fused: np.ndarray, ms: np.ndarray, block: int = 32, ratio: int = 4, p: float = 1.0) -> float:
    f, m = _check_full(fused, ms, ratio)
    bands = f.shape[0]
    low_block = max(block // ratio, 2)
    total = 0.0
    for i in range(bands):
        for j in range(bands):
            if i == j:
                continue
            total += abs(q_index(f[i], f[j], block) - q_index(m[i], m[j], low_block)) ** p
    return float((total / (bands * (bands - 1))) ** (1.0 / p))


def d_lambda_khan(
    fused: np.ndarray,
    lms: np.ndarray,
    profile: MtfProfile,
    block: int = 32,
    ratio: int = 4,
) -> float:
    f = np.asarray(fused, dtype=np.float64)
    degraded = mtf_filter(f, profile, ratio)
    return float(1.0 - q2n(degraded, lms, block))


def d_s(
    fused: np.ndarray,
    ms: np.ndarray,
    pan: np.ndarray,
    profile: MtfProfile,
    block: int = 32,
    ratio: int = 4,
    q: float = 1.0,
) -> float:
    f, m = _check_full(fused, ms, ratio)
    panchro = np.asarray(pan, dtype=np.float64)
    if panchro.ndim == 2:
        panchro = panchro[None]
    if panchro.shape[1:] != f.shape[1:]:
        raise MetricError(f"pan {panchro.shape} does not match fused {f.shape}", key="pan")
    pan_low = mtf_downsample(panchro, profile.pan_profile(), ratio)[0]
    low_block = max(block // ratio, 2)
    total = 0.0
    for band in range(f.shape[0]):
        total += abs(q_index(f[band], panchro[0], block) - q_index(m[band], pan_low, low_block)) ** q
    return float((total / f.shape[0]) ** (1.0 / q))


def hqnr(dl: float, ds: float) -> float:
    return float((1.0 - dl) * (1.0 - ds))


def qnr(fused: np.ndarray, ms: np.ndarray, pan: np.ndarray, profile: MtfProfile, opts: MetricOptions | None = None) -> float:
    opts = opts or MetricOptions()
    dl = d_lambda(fused, ms, opts.q_block, opts.ratio, opts.p)
    ds = d_s(fused, ms, pan, profile, opts.q_block, opts.ratio, opts.q)
    return hqnr(dl, ds)


def reduced_metrics(pred: np.ndarray, gt: np.ndarray, opts: MetricOptions | None = None) -> dict[str, float]:
    opts = opts or MetricOptions()
    block = min(opts.q_block, *np.shape(gt)[1:])
    return {
        "SAM": sam(pred, gt),
        "ERGAS": ergas(pred, gt, opts.ratio),
        "Q2n": q2n(pred, gt, block),
        "SCC": scc(pred, gt),
    }


def full_metrics(
    fused: np.ndarray,
    ms: np.ndarray,
    pan: np.ndarray,
    profile: MtfProfile,
    lms: np.ndarray | None = None,
    opts: MetricOptions | None = None,
) -> dict[str, float]:
    opts = opts or MetricOptions()
    if opts.lambda_variant == "khan":
        if lms is None:
            raise MetricError("the khan spectral distortion needs lms", key="lms")
        block = min(opts.q_block, *np.shape(lms)[1:])
        dl = d_lambda_khan(fused, lms, profile, block, opts.ratio)
    else:
        dl = d_lambda(fused, ms, opts.q_block, opts.ratio, opts.p)
    ds = d_s(fused, ms, pan, profile, opts.q_block, opts.ratio, opts.q)
    return {"D_lambda": dl, "D_s": ds, "HQNR": hqnr(dl, ds)}


def build_report(rows: list[dict[str, float]], mode: str, lambda_variant: str | None = None) -> MetricsReport:
    names = REDUCED_METRICS if mode == "reduced" else FULL_METRICS
    per_sample = {name: [float(row[name]) for row in rows] for name in names}
    return MetricsReport(resolution_mode=mode, per_sample=per_sample, lambda_variant=lambda_variant)


def format_report(report: MetricsReport) -> str:
    lines = ["metric\tsample\tvalue"]
    for name, values in report.per_sample.items():
        for index, value in enumerate(values):
            lines.append(f"{name}\t{index}\t{value:.6f}")
    lines.append("")
    lines.append(f"# summary ({report.resolution_mode} resolution, n={report.sample_count})")
    for name, (mean, std) in report.summary.items():
        lines.append(f"{name}\t{mean:.4f}±{std:.4f}")
    return "\n".join(lines) + "\n"

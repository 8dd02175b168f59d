"""Image-quality scores (CNR, PSNR, SSIM) and a per-plane timing harness.

All scores are computed on images before any scan conversion.  PSNR and SSIM
default to 8-bit quantized B-mode images so that ``R_max = 255`` is meaningful.
"""

from __future__ import annotations

import csv
import math
import statistics
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.signal import fftconvolve

__all__ = [
    "RoiSpec",
    "SsimParams",
    "TimingStats",
    "MetricsRow",
    "cnr",
    "psnr",
    "ssim",
    "quantize_8bit",
    "time_method",
    "disk_kernel",
    "write_metrics_csv",
    "read_metrics_csv",
]


@dataclass
class RoiSpec:
    """Background and anechoic regions as boolean masks (or flat indices)."""

    background: np.ndarray
    anechoic: np.ndarray

    def masks(self, shape) -> tuple[np.ndarray, np.ndarray]:
        out = []
        for sel in (self.background, self.anechoic):
            sel = np.asarray(sel)
            if sel.dtype == bool:
                if sel.shape != tuple(shape):
                    raise ValueError(f"ROI mask shape {sel.shape} does not match image {tuple(shape)}")
                m = sel
            else:
                m = np.zeros(int(np.prod(shape)), dtype=bool)
                flat = sel.ravel().astype(np.int64)
                if flat.size and (flat.min() < 0 or flat.max() >= m.size):
                    raise ValueError("ROI index outside the image")
                m[flat] = True
                m = m.reshape(shape)
            out.append(m)
        bg, an = out
        if not bg.any() or not an.any():
            raise ValueError("ROIs must be nonempty")
        if np.any(bg & an):
            raise ValueError("background and anechoic ROIs overlap")
        return bg, an


@dataclass(frozen=True)
class SsimParams:
    k1: float = 0.01
    k2: float = 0.03
    r_max: float = 255.0
    radius: int = 50

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0 or self.r_max <= 0 or self.radius < 0:
            raise ValueError("SSIM constants must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.r_max) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.r_max) ** 2


def cnr(image, roi: RoiSpec) -> float:
    """``|mu_B - mu_aS| / sqrt(sigma_B^2 + sigma_aS^2)`` with population sigmas.

    Returns ``inf`` for zero spread with distinct means and 0 for zero spread
    with equal means.
    """
    img = np.asarray(image, dtype=np.float64)
    bg, an = roi.masks(img.shape)
    b, a = img[bg], img[an]
    diff = abs(b.mean() - a.mean())
    spread = math.sqrt(b.var() + a.var())
    if spread == 0:
        return math.inf if diff > 0 else 0.0
    return float(diff / spread)


def psnr(F, F_hat, r_max: float = 255.0) -> float:
    """``10 log10(n1 n2 R_max^2 / ||F - F_hat||_F^2)``; ``inf`` for identical images."""
    a = np.asarray(F, dtype=np.float64)
    b = np.asarray(F_hat, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    err = float(np.sum((a - b) ** 2))
    if err == 0:
        return math.inf
    return 10.0 * math.log10(a.size * r_max ** 2 / err)


def disk_kernel(radius: int) -> np.ndarray:
    r = int(radius)
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    return (x * x + y * y <= r * r).astype(np.float64)


def _local_mean(x: np.ndarray, kernel: np.ndarray, count: np.ndarray) -> np.ndarray:
    return fftconvolve(x, kernel, mode="same") / count


def ssim(F, F_hat, params: SsimParams | None = None) -> float:
    """Mean local SSIM with a uniform disk window.

    Near the borders the window is clipped to the image and the local
    statistics are normalized by the number of pixels actually covered.
    """
    params = params or SsimParams()
    a = np.asarray(F, dtype=np.float64)
    b = np.asarray(F_hat, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"need two grayscale images of one shape, got {a.shape} and {b.shape}")
    k = disk_kernel(params.radius)
    count = np.rint(fftconvolve(np.ones(a.shape), k, mode="same"))
    mu_a = _local_mean(a, k, count)
    mu_b = _local_mean(b, k, count)
    var_a = np.maximum(_local_mean(a * a, k, count) - mu_a ** 2, 0.0)
    var_b = np.maximum(_local_mean(b * b, k, count) - mu_b ** 2, 0.0)
    cov = _local_mean(a * b, k, count) - mu_a * mu_b
    c1, c2 = params.c1, params.c2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def quantize_8bit(pixels_db, dynamic_range: float = 60.0) -> np.ndarray:
    """Map ``[-dynamic_range, 0]`` dB onto ``0..255``."""
    scaled = (np.asarray(pixels_db, dtype=np.float64) + dynamic_range) / dynamic_range * 255.0
    return np.clip(np.rint(scaled), 0, 255)


@dataclass
class TimingStats:
    median_ms: float
    mean_ms: float
    samples_ms: list = field(default_factory=list)


def time_method(method, planes, reps: int = 10, warmup: int = 1) -> TimingStats:
    """Wall-clock ms per plane of ``method(planes)``.

    Each repetition times one call over all planes and divides by the plane
    count; ``warmup`` untimed calls run first.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    planes = list(planes)
    if not planes:
        raise ValueError("no planes to time")
    for _ in range(warmup):
        method(planes)
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        method(planes)
        samples.append(1e3 * (time.perf_counter() - t0) / len(planes))
    return TimingStats(statistics.median(samples), statistics.fmean(samples), samples)


@dataclass
class MetricsRow:
    frame: str
    scheme: str
    method: str
    cnr: float = math.nan
    psnr: float = math.nan
    ssim: float = math.nan
    ms: float = math.nan


_HEADER_NOTE = "# metrics computed on pre-conversion 8-bit B-mode images"


def write_metrics_csv(rows, path, note: str = _HEADER_NOTE) -> None:
    names = [f.name for f in fields(MetricsRow)]
    with open(path, "w", newline="") as fh:
        if note:
            fh.write(note.rstrip() + "\n")
        writer = csv.DictWriter(fh, fieldnames=names)
        writer.writeheader()
        for row in rows:
            writer.writerow(asdict(row) if isinstance(row, MetricsRow) else row)


def read_metrics_csv(path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = []
    for rec in csv.DictReader(lines):
        rows.append(MetricsRow(rec["frame"], rec["scheme"], rec["method"],
                               *(float(rec[k]) for k in ("cnr", "psnr", "ssim", "ms"))))
    return rows

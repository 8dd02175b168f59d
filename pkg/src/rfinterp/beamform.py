"""MLA scan-line synthesis, delay-and-sum beamforming and B-mode display.

Scan lines are addressed by element coordinate ``eta`` (see
:mod:`rfinterp.simcore`).  With ``m``-fold MLA on transmits spaced ``P``
elements apart, transmit ``k`` feeds ``m`` lines at

    eta = axis_k + (q + 1/2 - m/2) * P / m,    q = 0 .. m-1

so lines are ordered by lateral position and tile the array uniformly.  Each
line keeps a reference to its source transmit; the receive record is reused
unchanged and the offset enters only through the receive delays.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import hilbert
from scipy import ndimage

from .simcore import ProbeConfig, RFCube, arc_centre, element_positions, line_geometry, rx_aperture_starts, \
    xmit_axis_elements

__all__ = [
    "RxSLCube",
    "BModeImage",
    "MLA_FACTORS",
    "synthesize_scan_lines",
    "das_beamform",
    "envelope_and_log",
    "pixel_coordinates",
    "scan_convert",
    "save_pgm",
    "load_pgm",
]

MLA_FACTORS = (1, 2, 4, 8)
_PGM_HEADER = re.compile(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


@dataclass
class RxSLCube:
    """Depth x Rx x SL data with per-line provenance.

    ``source_xmit[j]`` is the transmit whose receive record feeds line ``j``
    and ``sl_eta[j]`` its lateral position in element units.
    """

    data: np.ndarray
    mla_factor: int
    source_xmit: np.ndarray
    sl_eta: np.ndarray
    config: ProbeConfig

    def __post_init__(self):
        self.source_xmit = np.asarray(self.source_xmit, dtype=int)
        self.sl_eta = np.asarray(self.sl_eta, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != len(self.source_xmit):
            raise ValueError("data must be depth x rx x SL with one source per line")
        if len(self.sl_eta) != len(self.source_xmit):
            raise ValueError("one lateral position per scan line")

    @property
    def num_lines(self) -> int:
        return self.data.shape[2]

    def with_data(self, data: np.ndarray) -> "RxSLCube":
        return RxSLCube(data, self.mla_factor, self.source_xmit, self.sl_eta, self.config)


@dataclass
class BModeImage:
    """Log-compressed envelope in dB, within ``[-dynamic_range, 0]``."""

    pixels: np.ndarray
    dynamic_range: float = 60.0
    geometry: str = "linear"
    scan_converted: bool = False
    degenerate: bool = False
    meta: dict = field(default_factory=dict)

    def to_uint8(self) -> np.ndarray:
        scaled = (self.pixels + self.dynamic_range) / self.dynamic_range * 255.0
        return np.clip(np.rint(scaled), 0, 255).astype(np.uint8)


def _mla_offsets(m: int, spacing: float) -> np.ndarray:
    return (np.arange(m) + 0.5 - m / 2.0) * (spacing / m)


def synthesize_scan_lines(cube: RFCube, mla_factor: int, xmits=None, sl_positions=None) -> RxSLCube:
    """Expand the transmits ``xmits`` (default: all) into scan lines.

    Without ``sl_positions`` each transmit yields ``mla_factor`` lines at the
    symmetric offsets above.  With explicit positions every line is fed by the
    nearest listed transmit axis.
    """
    if mla_factor not in MLA_FACTORS:
        raise ValueError(f"MLA factor must be one of {MLA_FACTORS}, got {mla_factor}")
    config = cube.config
    xmits = np.arange(config.num_xmit) if xmits is None else np.asarray(xmits, dtype=int)
    if xmits.size == 0:
        raise ValueError("no transmit events to expand")
    axes = xmit_axis_elements(config)[xmits].astype(np.float64)
    if sl_positions is None:
        steps = np.diff(xmits)
        if steps.size and np.any(steps != steps[0]):
            raise ValueError("transmit subset must be uniformly spaced")
        spacing = config.xmit_spacing * (steps[0] if steps.size else 1)
        offsets = _mla_offsets(mla_factor, spacing)
        sl_eta = (axes[:, None] + offsets[None, :]).ravel()
        source = np.repeat(xmits, mla_factor)
    else:
        sl_eta = np.asarray(sl_positions, dtype=np.float64)
        nearest = np.argmin(np.abs(sl_eta[:, None] - axes[None, :]), axis=1)
        source = xmits[nearest]
    data = cube.data[:, :, source]
    return RxSLCube(data, mla_factor, source, sl_eta, config)


def das_beamform(cube: RxSLCube, config: ProbeConfig | None = None, apodization=None,
                 interpolation: str = "linear") -> np.ndarray:
    """Dynamic-receive delay-and-sum onto ``depth x SL``.

    Pixel ``i`` of line ``j`` sits at range ``i c / (2 fs)`` along the line.
    Its delay on receiver ``r`` of the source transmit ``k`` is the axial
    depth along the transmit axis plus the pixel-to-element distance, over
    ``c``.  Samples are read with linear interpolation (``"nearest"`` for the
    fast variant); delays outside the record contribute zero.
    """
    config = config or cube.config
    if interpolation not in ("linear", "nearest"):
        raise ValueError(f"unknown interpolation {interpolation!r}")
    n_depth, n_rx, n_sl = cube.data.shape
    fs, c = config.sampling_freq, config.sound_speed
    apod = np.ones(n_rx) if apodization is None else np.asarray(apodization, dtype=np.float64)
    elements = element_positions(config)
    starts = rx_aperture_starts(config)
    axes = xmit_axis_elements(config)
    origin, direction = line_geometry(config, cube.sl_eta)
    ax_origin, ax_dir = line_geometry(config, axes[cube.source_xmit].astype(np.float64))
    ranges = np.arange(n_depth) * config.sample_depth
    rx_idx = np.arange(n_rx)
    out = np.zeros((n_depth, n_sl))
    data = np.asarray(cube.data, dtype=np.float64)
    for j in range(n_sl):
        pix = origin[j][None, :] + ranges[:, None] * direction[j][None, :]        # (depth, 2)
        axial = (pix - ax_origin[j]) @ ax_dir[j]
        el = elements[starts[cube.source_xmit[j]]:starts[cube.source_xmit[j]] + n_rx]
        dist = np.hypot(pix[:, None, 0] - el[None, :, 0], pix[:, None, 1] - el[None, :, 1])
        s = (axial[:, None] + dist) * (fs / c)                                    # (depth, rx)
        trace = data[:, :, j]
        if interpolation == "nearest":
            i0 = np.rint(s).astype(np.int64)
            ok = (i0 >= 0) & (i0 < n_depth)
            vals = np.where(ok, trace[np.clip(i0, 0, n_depth - 1), rx_idx[None, :]], 0.0)
        else:
            i0 = np.floor(s).astype(np.int64)
            frac = s - i0
            ok = (i0 >= 0) & (i0 + 1 < n_depth)
            i0c = np.clip(i0, 0, n_depth - 2)
            lo = trace[i0c, rx_idx[None, :]]
            hi = trace[i0c + 1, rx_idx[None, :]]
            vals = np.where(ok, lo + frac * (hi - lo), 0.0)
        out[:, j] = vals @ apod
    return out


def envelope_and_log(beamformed, dynamic_range: float = 60.0, geometry: str = "linear") -> BModeImage:
    """Per-line analytic-signal magnitude, normalized, in dB clipped to the range."""
    x = np.asarray(beamformed, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("beamformed data must be finite")
    env = np.abs(hilbert(x, axis=0))
    peak = env.max() if env.size else 0.0
    if peak == 0:
        return BModeImage(np.full(x.shape, -float(dynamic_range)), dynamic_range, geometry,
                          degenerate=True)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(env / peak)
    return BModeImage(np.clip(db, -dynamic_range, 0.0), dynamic_range, geometry)


def pixel_coordinates(config: ProbeConfig, sl_eta, depth_samples: int | None = None) -> np.ndarray:
    """``(depth, SL, 2)`` array of pixel ``(x, z)`` positions in meters."""
    n = depth_samples or config.depth_samples
    origin, direction = line_geometry(config, np.asarray(sl_eta, dtype=np.float64))
    ranges = np.arange(n) * config.sample_depth
    return origin[None, :, :] + ranges[:, None, None] * direction[None, :, :]


def scan_convert(image: BModeImage, config: ProbeConfig, sl_eta, resolution: float | None = None):
    """Resample onto a Cartesian grid (bilinear); returns ``(image, extent)``.

    Linear-geometry images are returned with their native sampling.  Pixels
    outside the scanned sector get ``-dynamic_range``.
    """
    sl_eta = np.asarray(sl_eta, dtype=np.float64)
    coords = pixel_coordinates(config, sl_eta, image.pixels.shape[0])
    x_min, x_max = coords[..., 0].min(), coords[..., 0].max()
    z_min, z_max = coords[..., 1].min(), coords[..., 1].max()
    extent = (x_min, x_max, z_max, z_min)
    if config.geometry == "linear":
        return BModeImage(image.pixels.copy(), image.dynamic_range, "linear", True), extent
    res = resolution or config.sample_depth
    xs = np.arange(x_min, x_max, res)
    zs = np.arange(z_min, z_max, res)
    X, Z = np.meshgrid(xs, zs)
    r = config.radius
    cx, cz = arc_centre(config)
    theta = np.arctan2(X - cx, Z - cz)
    rng = np.hypot(X - cx, Z - cz) - r
    eta = theta * r / config.pitch + 0.5 * (config.num_elements - 1)
    col = np.interp(eta, sl_eta, np.arange(len(sl_eta)), left=-1, right=-1)
    row = rng / config.sample_depth
    out = ndimage.map_coordinates(image.pixels, [row, col], order=1, cval=-image.dynamic_range)
    outside = (col < 0) | (row < 0) | (row > image.pixels.shape[0] - 1)
    out[outside] = -image.dynamic_range
    return BModeImage(out, image.dynamic_range, "convex", True), (xs[0], xs[-1], zs[-1], zs[0])


def save_pgm(image: BModeImage, path, png: bool = False) -> None:
    """8-bit binary PGM plus a JSON sidecar; optionally a PNG copy."""
    path = Path(path)
    pix = image.to_uint8()
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(pix.tobytes())
    meta = {
        "dynamic_range_db": image.dynamic_range,
        "geometry": image.geometry,
        "scan_converted": image.scan_converted,
        "degenerate": image.degenerate,
    }
    meta.update(image.meta)
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    if png:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        plt.imsave(path.with_suffix(".png"), pix, cmap="gray", vmin=0, vmax=255)


def load_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    head = _PGM_HEADER.match(raw)
    if head is None:
        raise ValueError("not a binary PGM file")
    w, h, maxval = (int(g) for g in head.groups())
    if maxval != 255:
        raise ValueError("only 8-bit PGM is supported")
    body = raw[head.end():]
    if len(body) < w * h:
        raise ValueError(f"PGM payload has {len(body)} bytes, expected {w * h}")
    return np.frombuffer(body[:w * h], dtype=np.uint8).reshape(h, w)

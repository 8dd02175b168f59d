"""Point-scatterer simulation of focused-beam Depth-Rx-Xmit RF cubes.

Geometry conventions
--------------------
Lateral positions along the array are expressed in *element units*: a real
number ``eta`` where ``eta = n`` is the centre of element ``n``.  Every
transmit axis, scan line and receive aperture is described that way, which
lets the linear and convex geometries share all downstream code.

* linear:  origin ``((eta - (N-1)/2) * pitch, 0)``, direction ``(0, 1)``
* convex:  angle ``theta = (eta - (N-1)/2) * pitch / R``, origin on the arc
  ``(R sin theta, R cos theta - R)``, direction ``(sin theta, cos theta)``

Depth sample ``i`` corresponds to the round-trip range ``i * c / (2 fs)``.

Transmit event ``k`` fires along the axis of element
``floor(k N / X + N / (2X))``; its receive aperture is the ``num_rx_active``
elements centred on that element (Rx index ``num_rx_active // 2`` sits on the
axis), clamped to the physical array at the edges.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "ProbeConfig",
    "PulseSpec",
    "Phantom",
    "RFCube",
    "RFCFormatError",
    "linear_probe",
    "convex_probe",
    "element_positions",
    "xmit_axis_elements",
    "rx_aperture_starts",
    "line_geometry",
    "arc_centre",
    "simulate_rf",
    "simulate_sequence",
    "random_phantom",
    "save_cube",
    "load_cube",
    "save_cubes",
    "load_cubes",
]


@dataclass(frozen=True)
class ProbeConfig:
    """Transducer and acquisition geometry.

    Defaults follow the linear probe of the reference system (192 elements,
    64 active receivers, 96 transmit events, 0.2 mm pitch, 8.48 MHz carrier,
    40 MHz sampling).  ``focus_depth`` and ``tx_beam_width`` are not known for
    the hardware and are therefore plain configuration: ``None`` selects half
    the imaged depth and the transmit-axis spacing respectively.
    """

    num_elements: int = 192
    num_rx_active: int = 64
    num_xmit: int = 96
    pitch: float = 0.2e-3
    carrier_freq: float = 8.48e6
    sampling_freq: float = 40e6
    sound_speed: float = 1540.0
    depth_samples: int = 512
    geometry: str = "linear"
    radius: float | None = None
    focus_depth: float | None = None
    tx_beam_width: float | None = None

    def __post_init__(self):
        counts = ("num_elements", "num_rx_active", "num_xmit", "depth_samples")
        for name in counts:
            value = getattr(self, name)
            if int(value) != value or value <= 0:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.num_rx_active > self.num_elements:
            raise ValueError("num_rx_active cannot exceed num_elements")
        for name in ("pitch", "carrier_freq", "sampling_freq", "sound_speed"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.sampling_freq <= 2 * self.carrier_freq:
            raise ValueError("sampling_freq must exceed twice the carrier frequency")
        if self.geometry not in ("linear", "convex"):
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if self.geometry == "convex" and not (self.radius and self.radius > 0):
            raise ValueError("convex geometry needs a positive radius")
        for name in ("focus_depth", "tx_beam_width"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValueError(f"{name} must be positive when given")

    @property
    def wavelength(self) -> float:
        return self.sound_speed / self.carrier_freq

    @property
    def sample_depth(self) -> float:
        """Range increment of one depth sample (round trip)."""
        return self.sound_speed / (2.0 * self.sampling_freq)

    @property
    def max_depth(self) -> float:
        return self.depth_samples * self.sample_depth

    @property
    def xmit_spacing(self) -> float:
        """Distance between adjacent transmit axes, in element units."""
        return self.num_elements / self.num_xmit

    @property
    def focus(self) -> float:
        return self.focus_depth if self.focus_depth is not None else 0.5 * self.max_depth

    @property
    def beam_waist(self) -> float:
        if self.tx_beam_width is not None:
            return self.tx_beam_width
        return self.xmit_spacing * self.pitch

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ProbeConfig":
        return cls(**json.loads(text))

    def replace(self, **changes) -> "ProbeConfig":
        return replace(self, **changes)


def linear_probe(**overrides) -> ProbeConfig:
    return ProbeConfig(**overrides)


def convex_probe(**overrides) -> ProbeConfig:
    """Convex-array preset: 3.2 MHz carrier and 0.348 mm pitch.

    The curvature radius of the reference probe is not published; 50 mm is
    used unless overridden.
    """
    params = dict(carrier_freq=3.2e6, pitch=0.348e-3, geometry="convex", radius=50e-3)
    params.update(overrides)
    return ProbeConfig(**params)


@dataclass(frozen=True)
class PulseSpec:
    """Gaussian-windowed cosine; ``center_freq=None`` uses the probe carrier.

    ``fractional_bandwidth`` is the -6 dB full width of the amplitude
    spectrum relative to the centre frequency.
    """

    fractional_bandwidth: float = 0.6
    center_freq: float | None = None
    truncation_sigmas: float = 4.0

    def sigma_t(self, config: ProbeConfig) -> float:
        fc = self.center_freq or config.carrier_freq
        sigma_f = self.fractional_bandwidth * fc / (2.0 * math.sqrt(2.0 * math.log(2.0)))
        return 1.0 / (2.0 * math.pi * sigma_f)

    def __call__(self, t, config: ProbeConfig):
        """Pulse samples at times ``t``; float32 input is evaluated in float32."""
        fc = self.center_freq or config.carrier_freq
        t = np.asarray(t)
        real = t.dtype.type if t.dtype.kind == "f" else np.float64
        s = self.sigma_t(config)
        return np.exp(real(-0.5 / s ** 2) * t * t) * np.cos(real(2.0 * np.pi * fc) * t)

    def half_support(self, config: ProbeConfig) -> int:
        """Half-width of the pulse in samples."""
        return int(math.ceil(self.truncation_sigmas * self.sigma_t(config) * config.sampling_freq))


@dataclass
class Phantom:
    """Point scatterers as an ``(n, 3)`` array of ``(x, z, reflectivity)``.

    ``cysts`` holds ``(x, z, radius)`` of anechoic inclusions; it is metadata
    for region-of-interest selection and does not affect the simulation.
    """

    scatterers: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    cysts: list = field(default_factory=list)

    def __post_init__(self):
        s = np.asarray(self.scatterers, dtype=np.float64).reshape(-1, 3)
        if s.size and not np.all(s[:, 1] > 0):
            raise ValueError("every scatterer needs z > 0")
        self.scatterers = s

    def __len__(self):
        return len(self.scatterers)

    def union(self, other: "Phantom") -> "Phantom":
        return Phantom(np.vstack([self.scatterers, other.scatterers]), self.cysts + other.cysts)

    __add__ = union

    def scaled(self, factor: float) -> "Phantom":
        s = self.scatterers.copy()
        s[:, 2] *= factor
        return Phantom(s, list(self.cysts))

    def translated(self, dx: float = 0.0, dz: float = 0.0) -> "Phantom":
        s = self.scatterers.copy()
        s[:, 0] += dx
        s[:, 1] += dz
        cysts = [(x + dx, z + dz, r) for x, z, r in self.cysts]
        return Phantom(s, cysts)


@dataclass
class RFCube:
    """Depth x Rx x Xmit RF samples (float32) for one frame."""

    data: np.ndarray
    config: ProbeConfig
    frame_index: int = 0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        expected = (self.config.depth_samples, self.config.num_rx_active, self.config.num_xmit)
        if self.data.shape != expected:
            raise ValueError(f"cube shape {self.data.shape} does not match config {expected}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("RF cube contains non-finite values")

    @property
    def shape(self):
        return self.data.shape


# -- geometry -----------------------------------------------------------------

def line_geometry(config: ProbeConfig, eta):
    """Origins and unit directions of lines through element coordinate ``eta``.

    Returns ``(origin, direction)``, each of shape ``eta.shape + (2,)`` holding
    ``(x, z)`` pairs.
    """
    eta = np.asarray(eta, dtype=np.float64)
    u = eta - 0.5 * (config.num_elements - 1)
    if config.geometry == "linear":
        origin = np.stack([u * config.pitch, np.zeros_like(u)], axis=-1)
        direction = np.stack([np.zeros_like(u), np.ones_like(u)], axis=-1)
    else:
        theta = u * config.pitch / config.radius
        r = config.radius
        origin = np.stack([r * np.sin(theta), r * np.cos(theta) + arc_centre(config)[1]], axis=-1)
        direction = np.stack([np.sin(theta), np.cos(theta)], axis=-1)
    return origin, direction


def arc_centre(config: ProbeConfig) -> tuple[float, float]:
    """Centre of curvature ``(x, z)`` of a convex array.

    The arc is placed so its two end elements sit on ``z = 0``; every element
    and every point in front of the array then has ``z >= 0``.
    """
    half = 0.5 * (config.num_elements - 1) * config.pitch / config.radius
    return 0.0, -config.radius * float(np.cos(half))


def element_positions(config: ProbeConfig) -> np.ndarray:
    origin, _ = line_geometry(config, np.arange(config.num_elements))
    return origin


def xmit_axis_elements(config: ProbeConfig) -> np.ndarray:
    """Element index on which each transmit event is centred."""
    k = np.arange(config.num_xmit)
    n, x = config.num_elements, config.num_xmit
    return np.floor(k * n / x + n / (2.0 * x)).astype(int)


def rx_aperture_starts(config: ProbeConfig) -> np.ndarray:
    """First element of the receive aperture of every transmit event."""
    starts = xmit_axis_elements(config) - config.num_rx_active // 2
    return np.clip(starts, 0, config.num_elements - config.num_rx_active)


def _range_depth(config: ProbeConfig, xz: np.ndarray) -> np.ndarray:
    """Distance below the array surface, used for the imaged-depth check."""
    if config.geometry == "linear":
        return xz[:, 1]
    cx, cz = arc_centre(config)
    return np.hypot(xz[:, 0] - cx, xz[:, 1] - cz) - config.radius


def _beam_coordinates(config: ProbeConfig, xz: np.ndarray, eta: float):
    """Axial depth and lateral offset of points relative to the line ``eta``."""
    origin, direction = line_geometry(config, np.array([eta]))
    d = xz - origin[0]
    axial = d @ direction[0]
    lateral = d[:, 0] * direction[0, 1] - d[:, 1] * direction[0, 0]
    return axial, lateral


def transmit_weight(config: ProbeConfig, axial, lateral):
    """Gaussian-beam lateral weighting of a focused transmit.

    Waist ``config.beam_waist`` at the focal depth, Rayleigh range
    ``pi w0^2 / lambda``.  Unit weight on the beam axis.
    """
    w0 = config.beam_waist
    z_r = math.pi * w0 ** 2 / config.wavelength
    width = w0 * np.sqrt(1.0 + ((axial - config.focus) / z_r) ** 2)
    return np.exp(-0.5 * (lateral / width) ** 2)


# -- simulation ---------------------------------------------------------------

_WEIGHT_FLOOR = 1e-6


def simulate_rf(phantom: Phantom, config: ProbeConfig, pulse: PulseSpec | None = None,
                frame_index: int = 0) -> RFCube:
    """Single-scattering RF cube for ``phantom`` under focused transmits.

    Each trace is ``sum_s a_s * w_tx(s) * pulse(t - tau_tx(s) - tau_rx(s, e))``
    with ``tau_tx`` the axial depth along the transmit axis over ``c`` and
    ``tau_rx`` the scatterer-to-element distance over ``c``.  Scatterers whose
    transmit weight falls below 1e-6 are skipped for that event.
    """
    pulse = pulse or PulseSpec()
    if config.depth_samples <= 0:
        raise ValueError("depth_samples must be positive")
    xz = phantom.scatterers[:, :2]
    amp = phantom.scatterers[:, 2]
    if len(xz):
        depth = _range_depth(config, xz)
        deep = np.flatnonzero(depth > config.max_depth)
        if deep.size:
            raise ValueError(
                f"{deep.size} scatterer(s) lie deeper than the imaged depth "
                f"{config.max_depth * 1e3:.3f} mm (first index {deep[0]})")

    n_depth, n_rx, n_xmit = config.depth_samples, config.num_rx_active, config.num_xmit
    out = np.zeros((n_xmit, n_rx, n_depth))
    if not len(xz):
        return RFCube(out.transpose(2, 1, 0), config, frame_index)

    fs, c = config.sampling_freq, config.sound_speed
    half = pulse.half_support(config)
    taps = np.arange(-half, half + 1)
    elements = element_positions(config)
    axes = xmit_axis_elements(config)
    starts = rx_aperture_starts(config)
    rx_lin = np.arange(n_rx)[None, :, None] * n_depth

    for k in range(n_xmit):
        axial, lateral = _beam_coordinates(config, xz, axes[k])
        w = transmit_weight(config, axial, lateral) * amp
        sel = np.abs(w) > _WEIGHT_FLOOR * max(np.abs(amp).max(), 1e-300)
        sel &= amp != 0
        if not sel.any():
            continue
        pts = xz[sel]
        el = elements[starts[k]:starts[k] + n_rx]
        dist = np.hypot(pts[:, None, 0] - el[None, :, 0], pts[:, None, 1] - el[None, :, 1])
        centre = (axial[sel, None] + dist) * (fs / c)          # (s, rx) in samples
        base = np.floor(centre).astype(np.int64)
        idx = base[:, :, None] + taps[None, None, :]           # (s, rx, taps)
        delta = (idx - centre[:, :, None]).astype(np.float32) * np.float32(1.0 / fs)
        vals = pulse(delta, config) * w[sel, None, None]
        ok = (idx >= 0) & (idx < n_depth)
        flat = (idx + rx_lin)[ok]
        out[k] = np.bincount(flat, weights=vals[ok], minlength=n_rx * n_depth).reshape(n_rx, n_depth)
    return RFCube(out.transpose(2, 1, 0), config, frame_index)


def random_phantom(rng: np.random.Generator, config: ProbeConfig, n_scatterers: int = 3000,
                   n_cysts: int = 1, n_bright: int = 3, margin: float = 0.05) -> Phantom:
    """Speckle background with anechoic cysts and a few bright points.

    Scatterers fill the imaged sector between ``margin`` and ``1 - margin`` of
    the depth range with Gaussian reflectivities; points falling inside a cyst
    are removed.
    """
    depth_lo, depth_hi = margin * config.max_depth, (1.0 - margin) * config.max_depth
    n_el = config.num_elements

    def place(count):
        eta = rng.uniform(0, n_el - 1, count)
        rng_depth = rng.uniform(depth_lo, depth_hi, count)
        origin, direction = line_geometry(config, eta)
        return origin + rng_depth[:, None] * direction

    pts = place(n_scatterers)
    amp = rng.standard_normal(n_scatterers)
    cysts = []
    span = config.max_depth
    for _ in range(n_cysts):
        radius = rng.uniform(0.12, 0.22) * span
        eta = rng.uniform(0.2, 0.8) * (n_el - 1)
        rd = rng.uniform(depth_lo + radius, depth_hi - radius)
        origin, direction = line_geometry(config, np.array([eta]))
        centre = origin[0] + rd * direction[0]
        cysts.append((float(centre[0]), float(centre[1]), float(radius)))
        keep = np.hypot(pts[:, 0] - centre[0], pts[:, 1] - centre[1]) > radius
        pts, amp = pts[keep], amp[keep]
    if n_bright:
        bright = place(n_bright)
        pts = np.vstack([pts, bright])
        amp = np.concatenate([amp, rng.choice([-1.0, 1.0], n_bright) * rng.uniform(5, 10, n_bright)])
    return Phantom(np.column_stack([pts, amp]), cysts)


def simulate_sequence(phantom: Phantom, config: ProbeConfig, n_frames: int,
                      rng: np.random.Generator, step: float = 10e-6,
                      pulse: PulseSpec | None = None) -> list[RFCube]:
    """Frames of a slowly drifting phantom (random-walk rigid motion).

    ``step`` is the standard deviation of the per-frame displacement in
    meters on each axis.
    """
    frames = []
    current = phantom
    for f in range(n_frames):
        frames.append(simulate_rf(current, config, pulse, frame_index=f))
        dx, dz = rng.normal(0.0, step, 2)
        moved = current.translated(dx, dz)
        depth = _range_depth(config, moved.scatterers[:, :2]) if len(moved) else np.zeros(0)
        if len(moved) and (depth.max() > config.max_depth or moved.scatterers[:, 1].min() <= 0):
            moved = current.translated(-dx, -dz)
        current = moved
    return frames


# -- RFC1 serialization ---------------------------------------------------------

_MAGIC = b"RFC1"
_HEADER = struct.Struct("<4I")


class RFCFormatError(ValueError):
    """Malformed RFC1 stream; ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _sidecar(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".json")


def save_cubes(cubes: list[RFCube], path) -> None:
    """Write frames to an RFC1 file plus a JSON ProbeConfig sidecar.

    Layout: ``b"RFC1"``, u32 LE ``depth, rx, xmit, frame_count``, then f32 LE
    samples with depth fastest, then rx, then xmit, then frame.
    """
    if not cubes:
        raise ValueError("nothing to save")
    path = Path(path)
    config = cubes[0].config
    shape = cubes[0].shape
    for cube in cubes:
        if cube.shape != shape or cube.config != config:
            raise ValueError("all frames must share one configuration")
    stack = np.stack([c.data for c in cubes], axis=-1)      # depth, rx, xmit, frame
    payload = np.asarray(stack, dtype="<f4").tobytes(order="F")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_HEADER.pack(*shape, len(cubes)))
        fh.write(payload)
    meta = json.loads(config.to_json())
    meta["frame_indices"] = [int(c.frame_index) for c in cubes]
    _sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True))


def save_cube(cube: RFCube, path) -> None:
    save_cubes([cube], path)


def _read_rfc1(raw: bytes):
    if len(raw) < 4 or raw[:4] != _MAGIC:
        raise RFCFormatError(f"bad magic {raw[:4]!r}, expected {_MAGIC!r}", 0)
    if len(raw) < 4 + _HEADER.size:
        raise RFCFormatError("truncated dimension header", len(raw))
    dims = _HEADER.unpack_from(raw, 4)
    names = ("depth", "rx", "xmit", "frame_count")
    for i, (name, value) in enumerate(zip(names, dims)):
        if value == 0:
            raise RFCFormatError(f"header field {name} is zero", 4 + 4 * i)
    start = 4 + _HEADER.size
    expected = 4 * math.prod(dims)
    actual = len(raw) - start
    if actual != expected:
        raise RFCFormatError(
            f"payload length mismatch: expected {expected} bytes, found {actual}", start)
    data = np.frombuffer(raw, dtype="<f4", offset=start).reshape(dims, order="F")
    return dims, data


def load_cubes(path, config: ProbeConfig | None = None) -> list[RFCube]:
    """Read every frame of an RFC1 file.

    The ProbeConfig comes from the sidecar unless ``config`` is given.
    """
    path = Path(path)
    dims, data = _read_rfc1(path.read_bytes())
    indices = list(range(dims[3]))
    if config is None:
        meta = json.loads(_sidecar(path).read_text())
        indices = meta.pop("frame_indices", indices)
        config = ProbeConfig(**meta)
    if (config.depth_samples, config.num_rx_active, config.num_xmit) != dims[:3]:
        raise RFCFormatError(f"dimensions {dims[:3]} disagree with the probe configuration", 4)
    return [RFCube(np.array(data[..., f]), config, int(indices[f])) for f in range(dims[3])]


def load_cube(path, config: ProbeConfig | None = None) -> RFCube:
    return load_cubes(path, config)[0]

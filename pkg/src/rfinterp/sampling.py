"""Rx and Rx-Xmit sub-sampling masks.

A mask is a boolean ``[num_rx, num_xmit]`` matrix; ``True`` marks a measured
sample.  Random Rx selection is drawn per transmit column (or once and shared
by every column when ``shared=True``), always keeping the centre receiver
``num_rx // 2``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hankel import RxXmitPlane

__all__ = [
    "SamplingMask",
    "make_rx_mask",
    "make_rx_xmit_mask",
    "frame_seed",
    "apply_mask",
    "save_mask",
    "load_mask",
]

RX_FACTORS = (1, 2, 4, 8)


@dataclass(frozen=True)
class SamplingMask:
    kind: str
    keep: np.ndarray
    rx_factor: int
    xmit_factor: int
    seed: int

    def __post_init__(self):
        if self.kind not in ("rx_random", "rx_xmit"):
            raise ValueError(f"unknown mask kind {self.kind!r}")
        keep = np.asarray(self.keep, dtype=bool)
        if keep.ndim != 2:
            raise ValueError("mask must be a 2-D matrix")
        keep.setflags(write=False)
        object.__setattr__(self, "keep", keep)

    @property
    def shape(self):
        return self.keep.shape

    @property
    def fraction(self) -> float:
        return float(self.keep.mean())

    def kept_columns(self) -> np.ndarray:
        return np.flatnonzero(self.keep.any(axis=0))

    def header(self) -> dict:
        return {
            "kind": self.kind,
            "factors": [self.rx_factor, self.xmit_factor],
            "seed": int(self.seed),
            "shape": list(self.shape),
        }

    def __eq__(self, other):
        if not isinstance(other, SamplingMask):
            return NotImplemented
        return self.header() == other.header() and np.array_equal(self.keep, other.keep)

    def __hash__(self):
        return hash((self.kind, self.rx_factor, self.xmit_factor, self.seed, self.keep.tobytes()))


def frame_seed(base_seed: int, frame_index: int) -> int:
    """Per-frame mask seed derived from a base seed."""
    return int(np.random.SeedSequence([int(base_seed), int(frame_index)]).generate_state(1, np.uint64)[0])


def _random_rows(num_rx: int, num_cols: int, factor: int, rng: np.random.Generator,
                 shared: bool) -> np.ndarray:
    keep = np.zeros((num_rx, num_cols), dtype=bool)
    n_keep = math.ceil(num_rx / factor)
    centre = num_rx // 2
    others = np.delete(np.arange(num_rx), centre)
    pattern = None
    for col in range(num_cols):
        if pattern is None or not shared:
            pattern = rng.choice(others, size=n_keep - 1, replace=False)
        keep[centre, col] = True
        keep[pattern, col] = True
    return keep


def _check_rx_factor(num_rx: int, factor: int):
    if factor not in RX_FACTORS:
        raise ValueError(f"rx factor must be one of {RX_FACTORS}, got {factor}")
    if factor > num_rx:
        raise ValueError(f"rx factor {factor} exceeds the number of receivers {num_rx}")


def make_rx_mask(num_rx: int, num_xmit: int, factor: int, seed: int,
                 shared: bool = False) -> SamplingMask:
    """Random Rx sub-sampling: ``ceil(num_rx / factor)`` receivers per column.

    The centre receiver is always kept.  ``factor == 1`` keeps everything.
    """
    _check_rx_factor(num_rx, factor)
    rng = np.random.default_rng(seed)
    keep = _random_rows(num_rx, num_xmit, factor, rng, shared)
    return SamplingMask("rx_random", keep, factor, 1, seed)


def make_rx_xmit_mask(num_rx: int, num_xmit: int, rx_factor: int, xmit_factor: int,
                      seed: int, shared: bool = False) -> SamplingMask:
    """Uniform Xmit decimation followed by random Rx sub-sampling.

    Columns ``0, xmit_factor, 2 * xmit_factor, ...`` are kept; every other
    column is dropped entirely.
    """
    if xmit_factor < 1 or num_xmit % xmit_factor:
        raise ValueError(f"xmit factor {xmit_factor} does not divide {num_xmit}")
    _check_rx_factor(num_rx, rx_factor)
    if xmit_factor == 1:
        mask = make_rx_mask(num_rx, num_xmit, rx_factor, seed, shared)
        return SamplingMask("rx_xmit", mask.keep, rx_factor, 1, seed)
    rng = np.random.default_rng(seed)
    kept = np.arange(0, num_xmit, xmit_factor)
    keep = np.zeros((num_rx, num_xmit), dtype=bool)
    keep[:, kept] = _random_rows(num_rx, len(kept), rx_factor, rng, shared)
    return SamplingMask("rx_xmit", keep, rx_factor, xmit_factor, seed)


def apply_mask(plane, mask: SamplingMask) -> RxXmitPlane:
    """Zero the dropped entries and mark them missing.

    ``plane`` may be an :class:`RxXmitPlane` (existing missing flags are
    kept) or a bare array.
    """
    if isinstance(plane, RxXmitPlane):
        values, missing = plane.values, plane.missing
    else:
        values = np.asarray(plane, dtype=np.float64)
        missing = np.zeros(values.shape, dtype=bool)
    if values.shape != mask.shape:
        raise ValueError(f"plane shape {values.shape} does not match mask {mask.shape}")
    missing = missing | ~mask.keep
    return RxXmitPlane(np.where(missing, 0.0, values), missing)


def apply_mask_cube(data: np.ndarray, mask: SamplingMask) -> np.ndarray:
    """Zero-fill a ``[depth, rx, xmit]`` cube with one mask for every depth."""
    if data.shape[1:] != mask.shape:
        raise ValueError(f"cube planes {data.shape[1:]} do not match mask {mask.shape}")
    return np.where(mask.keep[None], data, 0).astype(data.dtype, copy=False)


_LEN = struct.Struct("<I")


def save_mask(mask: SamplingMask, path) -> None:
    """u32 LE header length, UTF-8 JSON header, then ``np.packbits`` of the
    row-major keep matrix."""
    header = json.dumps(mask.header(), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_LEN.pack(len(header)))
        fh.write(header)
        fh.write(np.packbits(mask.keep.ravel()).tobytes())


def load_mask(path) -> SamplingMask:
    raw = Path(path).read_bytes()
    if len(raw) < _LEN.size:
        raise ValueError("mask file too short")
    (n,) = _LEN.unpack_from(raw, 0)
    header = json.loads(raw[_LEN.size:_LEN.size + n])
    rows, cols = header["shape"]
    bits = np.frombuffer(raw, dtype=np.uint8, offset=_LEN.size + n)
    if bits.size != math.ceil(rows * cols / 8):
        raise ValueError(f"mask payload has {bits.size} bytes, expected {math.ceil(rows * cols / 8)}")
    keep = np.unpackbits(bits, count=rows * cols).astype(bool).reshape(rows, cols)
    rx_factor, xmit_factor = header["factors"]
    return SamplingMask(header["kind"], keep, rx_factor, xmit_factor, header["seed"])

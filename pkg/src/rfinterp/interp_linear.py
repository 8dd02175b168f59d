"""Separable piecewise-linear interpolation baseline over Rx, Xmit and frames.

Each pass runs 1-D linear interpolation along one axis between the nearest
known neighbours, with nearest-value extrapolation at the edges.  Only
entries that are still unknown are written, and entries filled by a pass
count as known for the passes after it.  A line with no known entry is left
for the next pass.  The frame pass interpolates each entry across the
``window`` frames centred on the current one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hankel import RxXmitPlane
from .sampling import apply_mask

__all__ = ["LinearParams", "linear_interpolate", "linear_interpolate_shared", "fill_axis",
           "interpolation_matrix"]

_AXES = {"rx": 0, "xmit": 1}


@dataclass(frozen=True)
class LinearParams:
    order: tuple = ("rx", "xmit", "frame")
    window: int = 3

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"frame window must be a positive odd count, got {self.window}")
        if set(self.order) - {"rx", "xmit", "frame"} or len(set(self.order)) != len(self.order):
            raise ValueError(f"invalid pass order {self.order}")


def fill_axis(values: np.ndarray, known: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """One in-plane pass; returns updated ``(values, known)``."""
    v = np.moveaxis(values.copy(), axis, 0)
    k = np.moveaxis(known.copy(), axis, 0)
    pos = np.arange(v.shape[0])
    for j in range(v.shape[1]):
        kk = k[:, j]
        if kk.all() or not kk.any():
            continue
        gaps = ~kk
        v[gaps, j] = np.interp(pos[gaps], pos[kk], v[kk, j])
        k[:, j] = True
    return np.moveaxis(v, 0, axis), np.moveaxis(k, 0, axis)


def _fill_frames(values: np.ndarray, known: np.ndarray, window: int):
    """Interpolate along the frame axis using only frames within the window."""
    T = values.shape[0]
    half = window // 2
    out_v, out_k = values.copy(), known.copy()
    for t in range(T):
        todo = ~known[t]
        if not todo.any() or half == 0:
            continue
        prev_val = np.full(values.shape[1:], np.nan)
        prev_d = np.zeros(values.shape[1:])
        next_val = np.full(values.shape[1:], np.nan)
        next_d = np.zeros(values.shape[1:])
        # nearest known sample on either side, searched outward
        for d in range(half, 0, -1):
            if t - d >= 0:
                hit = known[t - d]
                prev_val = np.where(hit, values[t - d], prev_val)
                prev_d = np.where(hit, d, prev_d)
            if t + d < T:
                hit = known[t + d]
                next_val = np.where(hit, values[t + d], next_val)
                next_d = np.where(hit, d, next_d)
        has_p, has_n = ~np.isnan(prev_val), ~np.isnan(next_val)
        both = has_p & has_n
        w = np.divide(prev_d, prev_d + next_d, out=np.zeros_like(prev_d), where=both)
        fill = np.where(both, prev_val + w * (np.nan_to_num(next_val) - np.nan_to_num(prev_val)),
                        np.where(has_p, prev_val, next_val))
        sel = todo & (has_p | has_n)
        out_v[t][sel] = fill[sel]
        out_k[t][sel] = True
    return out_v, out_k


def _to_arrays(frames):
    values, known = [], []
    for item in frames:
        plane, mask = item if isinstance(item, tuple) else (item, None)
        if mask is not None:
            plane = apply_mask(plane, mask)
        elif not isinstance(plane, RxXmitPlane):
            plane = RxXmitPlane(plane)
        values.append(plane.zero_filled())
        known.append(plane.measured)
    return np.stack(values), np.stack(known)


def linear_interpolate(frames, params: LinearParams | None = None) -> list[np.ndarray]:
    """Fill the missing entries of a sequence of planes.

    ``frames`` holds ``(plane, mask)`` pairs or :class:`RxXmitPlane` objects.
    Measured entries are returned bit-exactly.
    """
    params = params or LinearParams()
    values, known = _to_arrays(frames)
    empty = ~known.reshape(len(known), -1).any(axis=1)
    if empty.any() and params.window == 1:
        raise ValueError(f"frame {int(np.argmax(empty))} has no measured samples and the window is 1")
    for name in params.order:
        if name == "frame":
            values, known = _fill_frames(values, known, params.window)
            continue
        for t in range(len(values)):
            values[t], known[t] = fill_axis(values[t], known[t], _AXES[name])
    if not known.all():
        raise ValueError("some entries could not be reached by any interpolation pass")
    return list(values)


def interpolation_matrix(known: np.ndarray) -> np.ndarray:
    """``W`` with ``W @ v`` equal to the 1-D fill of ``v`` from its known entries."""
    known = np.asarray(known, dtype=bool)
    n = known.size
    pos = np.arange(n)
    eye = np.eye(n)
    return np.stack([np.interp(pos, pos[known], eye[known, j]) for j in range(n)], axis=1)


def linear_interpolate_shared(planes, known, params: LinearParams | None = None) -> np.ndarray:
    """Batched in-plane passes for a stack ``(n, n1, n2)`` sharing one pattern.

    Gives the same result as :func:`linear_interpolate` on each plane when
    the in-plane passes reach every entry (the frame pass is not used).
    """
    params = params or LinearParams()
    values = np.array(planes, dtype=np.float64)
    known = np.asarray(known, dtype=bool).copy()
    if values.shape[1:] != known.shape:
        raise ValueError(f"planes {values.shape[1:]} do not match the pattern {known.shape}")
    values[:, ~known] = 0.0
    for name in params.order:
        if name == "frame":
            continue
        axis = _AXES[name]
        k = known if axis == 0 else known.T
        v = values if axis == 0 else values.transpose(0, 2, 1)
        for j in range(k.shape[1]):
            kk = k[:, j]
            if kk.all() or not kk.any():
                continue
            W = interpolation_matrix(kk)
            v[:, :, j] = np.where(kk, v[:, :, j], v[:, :, j] @ W.T)
            k[:, j] = True
    if not known.all():
        raise ValueError("some entries could not be reached by the in-plane passes")
    return values

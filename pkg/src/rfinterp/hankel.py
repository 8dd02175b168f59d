"""Block Hankel lifting with periodic boundaries.

Indexing is 0-based.  For a plane ``F`` of shape ``(n1, n2)`` and filter size
``(d1, d2)`` the lifted matrix has shape ``(n1 * n2, d1 * d2)`` and

    H[b * n1 + i, c * d1 + j] = F[(i + j) % n1, (b + c) % n2]

i.e. block-row ``b`` / block-column ``c`` is ``hankel_1d(F[:, (b + c) % n2], d1)``.
Every plane entry therefore occurs exactly ``d1 * d2`` times.  Vectorization
stacks columns (``vec(K)[c * d1 + j] = K[j, c]``) and the annihilation relation
reads ``H @ vec(K)[::-1] = 0``, which is the circular convolution ``F * K``
sampled at a fixed shift.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RxXmitPlane",
    "AnnihilatingFilter",
    "BlockHankel",
    "hankel_1d",
    "block_hankel",
    "extended_hankel",
    "unlift",
    "unlift_sum",
    "annihilation_residual",
    "numerical_rank",
    "circular_convolve",
]


@dataclass
class RxXmitPlane:
    """One depth slice: values plus a missing-sample flag matrix."""

    values: np.ndarray
    missing: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("plane must be 2-D")
        if self.missing is None:
            self.missing = np.zeros(self.values.shape, dtype=bool)
        self.missing = np.asarray(self.missing, dtype=bool)
        if self.missing.shape != self.values.shape:
            raise ValueError("missing flags must match the plane shape")
        if not np.all(np.isfinite(self.values[~self.missing])):
            raise ValueError("plane has non-finite measured values")

    @property
    def shape(self):
        return self.values.shape

    @property
    def measured(self) -> np.ndarray:
        return ~self.missing

    def zero_filled(self) -> np.ndarray:
        return np.where(self.missing, 0.0, self.values)


@dataclass
class AnnihilatingFilter:
    taps: np.ndarray

    def __post_init__(self):
        self.taps = np.atleast_2d(np.asarray(self.taps, dtype=np.float64))
        if not np.any(self.taps):
            raise ValueError("annihilating filter cannot be all zeros")

    @property
    def shape(self):
        return self.taps.shape

    def vec(self) -> np.ndarray:
        return self.taps.ravel(order="F")

    def spectrum(self, n1: int, n2: int) -> np.ndarray:
        """Zero-padded 2-D DFT of the taps on an ``n1 x n2`` grid."""
        return np.fft.fft2(self.taps, s=(n1, n2))


@dataclass
class BlockHankel:
    matrix: np.ndarray
    dims: tuple = field(default=None)

    @property
    def n1(self):
        return self.dims[0]

    @property
    def n2(self):
        return self.dims[1]

    @property
    def d1(self):
        return self.dims[2]

    @property
    def d2(self):
        return self.dims[3]


def _as_array(F) -> np.ndarray:
    if isinstance(F, RxXmitPlane):
        if F.missing.any():
            raise ValueError("plane has missing entries; zero-fill it explicitly before lifting")
        return F.values
    return np.asarray(F, dtype=np.float64)


def hankel_1d(f, d1: int) -> np.ndarray:
    """Wrapped Hankel matrix: ``out[i, j] = f[(i + j) % n1]``."""
    f = np.asarray(f)
    n1 = f.shape[0]
    if not 1 <= d1 <= n1:
        raise ValueError(f"filter length {d1} must lie in [1, {n1}]")
    idx = (np.arange(n1)[:, None] + np.arange(d1)[None, :]) % n1
    return f[idx]


def _lift_indices(n1: int, n2: int, d1: int, d2: int):
    """Row and column plane indices of every lifted entry."""
    i = np.arange(n1)
    b = np.arange(n2)
    j = np.arange(d1)
    c = np.arange(d2)
    rows = (i[None, :, None, None] + j[None, None, None, :]) % n1       # (1, n1, 1, d1)
    cols = (b[:, None, None, None] + c[None, None, :, None]) % n2       # (n2, 1, d2, 1)
    rows = np.broadcast_to(rows, (n2, n1, d2, d1)).reshape(n1 * n2, d1 * d2)
    cols = np.broadcast_to(cols, (n2, n1, d2, d1)).reshape(n1 * n2, d1 * d2)
    return rows, cols


def block_hankel(F, d1: int, d2: int) -> BlockHankel:
    """Periodic block Hankel lifting of a plane."""
    arr = _as_array(F)
    n1, n2 = arr.shape
    if not (1 <= d1 <= n1 and 1 <= d2 <= n2):
        raise ValueError(f"filter {d1}x{d2} does not fit a {n1}x{n2} plane")
    rows, cols = _lift_indices(n1, n2, d1, d2)
    return BlockHankel(arr[rows, cols], (n1, n2, d1, d2))


def extended_hankel(frames, d1: int, d2: int) -> BlockHankel:
    """Column-wise concatenation of the lifts of ``N`` equally shaped frames.

    ``dims`` gains a fifth entry, the frame count.
    """
    lifts = [block_hankel(F, d1, d2) for F in frames]
    if not lifts:
        raise ValueError("need at least one frame")
    dims = lifts[0].dims
    if any(h.dims != dims for h in lifts):
        raise ValueError("all frames must share one shape")
    return BlockHankel(np.hstack([h.matrix for h in lifts]), dims + (len(lifts),))


def unlift_sum(H: BlockHankel) -> np.ndarray:
    """Adjoint of the lifting: each plane entry is the sum of its occurrences.

    For an extended matrix the result has a leading frame axis.
    """
    n1, n2, d1, d2 = H.dims[:4]
    n_frames = H.dims[4] if len(H.dims) > 4 else None
    m = np.asarray(H.matrix)
    width = d1 * d2
    if m.shape != (n1 * n2, width * (n_frames or 1)):
        raise ValueError(f"matrix shape {m.shape} inconsistent with dims {H.dims}")
    # Undo the wrap per block-column (c, j): entry (b*n1+i) holds F[(i+j)%n1, (b+c)%n2].
    blocks = m.reshape(n2, n1, n_frames or 1, d2, d1)
    out = np.zeros((n_frames or 1, n1, n2))
    for c in range(d2):
        for j in range(d1):
            piece = blocks[:, :, :, c, j]                      # (n2, n1, frames)
            out += np.roll(piece, shift=(c, j), axis=(0, 1)).transpose(2, 1, 0)
    return out if n_frames is not None else out[0]


def unlift(H: BlockHankel) -> np.ndarray:
    """Left inverse of the lifting: average of the ``d1 * d2`` occurrences."""
    d1, d2 = H.dims[2], H.dims[3]
    return unlift_sum(H) / (d1 * d2)


def circular_convolve(F, K) -> np.ndarray:
    """2-D circular convolution of a plane with a (smaller) filter, via FFT."""
    F = np.asarray(F, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    spec = np.fft.fft2(F) * np.fft.fft2(K, s=F.shape)
    return np.real(np.fft.ifft2(spec))


def annihilation_residual(F, K, return_flag: bool = False):
    """``||H(F) vec(K)[::-1]|| / ||F||``; zero iff ``K`` annihilates ``F``.

    A zero plane gives 0 with the degenerate flag set; the flag is returned
    only when ``return_flag`` is true.
    """
    arr = _as_array(F)
    filt = K if isinstance(K, AnnihilatingFilter) else AnnihilatingFilter(K)
    d1, d2 = filt.shape
    norm = np.linalg.norm(arr)
    if norm == 0:
        return (0.0, True) if return_flag else 0.0
    H = block_hankel(arr, d1, d2)
    value = float(np.linalg.norm(H.matrix @ filt.vec()[::-1]) / norm)
    return (value, False) if return_flag else value


def numerical_rank(H, rel_tol: float = 1e-8) -> int:
    """Count singular values with ``sigma_k / sigma_1 > rel_tol``."""
    if not 0 < rel_tol < 1:
        raise ValueError("rel_tol must lie in (0, 1)")
    m = H.matrix if isinstance(H, BlockHankel) else np.asarray(H)
    if m.size == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.count_nonzero(s / s[0] > rel_tol))

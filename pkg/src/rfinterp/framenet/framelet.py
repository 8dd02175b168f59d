"""Convolutional framelet expansion of a lifted plane.

With pooling ``Phi`` / unpooling ``Phi_t`` (``n1 n2 x m``) satisfying
``Phi_t @ Phi.T = alpha I`` and encoder / decoder bases ``Psi`` / ``Psi_t``
(``d1 d2 x s``), the coefficients and the reconstruction are

    C = Phi.T @ H(F) @ Psi / alpha
    F = unlift(Phi_t @ C @ Psi_t.T)

Both maps are also available as multichannel circular convolutions, which is
how a network layer computes them.  ``path="matrix"`` and ``path="conv"``
select the two routes; they agree to rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..hankel import RxXmitPlane, block_hankel, circular_convolve, unlift, BlockHankel

__all__ = [
    "FrameOperators",
    "FilterBank",
    "FrameletCoefficients",
    "check_frame_condition",
    "identity_pair",
    "redundant_pair",
    "framelet_decompose",
    "framelet_reconstruct",
]

FRAME_TOL = 1e-10


def check_frame_condition(pool, unpool, tol: float = FRAME_TOL):
    """Return ``(holds, alpha)`` for ``unpool @ pool.T == alpha * I``.

    ``alpha`` is the mean diagonal of the product; the condition holds when it
    is positive and every entry is within ``tol * max(1, alpha)``.
    """
    pool = np.asarray(pool, dtype=np.float64)
    unpool = np.asarray(unpool, dtype=np.float64)
    if pool.shape != unpool.shape:
        raise ValueError(f"pooling shapes differ: {pool.shape} vs {unpool.shape}")
    gram = unpool @ pool.T
    n = gram.shape[0]
    alpha = float(np.trace(gram) / n)
    err = np.abs(gram - alpha * np.eye(n)).max()
    holds = alpha > 0 and err <= tol * max(1.0, alpha)
    return bool(holds), alpha


@dataclass
class FrameOperators:
    pool: np.ndarray
    unpool: np.ndarray
    alpha: float = None

    def __post_init__(self):
        holds, alpha = check_frame_condition(self.pool, self.unpool)
        if not holds:
            raise ValueError("pooling pair violates the frame condition")
        self.pool = np.asarray(self.pool, dtype=np.float64)
        self.unpool = np.asarray(self.unpool, dtype=np.float64)
        self.alpha = alpha


def identity_pair(n: int) -> FrameOperators:
    """Complete basis: ``Phi = Phi_t = I`` (alpha = 1)."""
    eye = np.eye(n)
    return FrameOperators(eye, eye.copy())


def redundant_pair(n: int) -> FrameOperators:
    """Redundant basis ``[I I]`` (alpha = 2), the algebraic form of a skip."""
    both = np.hstack([np.eye(n), np.eye(n)])
    return FrameOperators(both, both.copy())


@dataclass
class FilterBank:
    """Encoder basis ``Psi`` and decoder basis ``Psi_t``, both ``d1 d2 x s``."""

    encoder: np.ndarray
    decoder: np.ndarray
    d1: int
    d2: int

    def __post_init__(self):
        self.encoder = np.atleast_2d(np.asarray(self.encoder, dtype=np.float64))
        self.decoder = np.atleast_2d(np.asarray(self.decoder, dtype=np.float64))
        width = self.d1 * self.d2
        if self.encoder.shape[0] != width or self.decoder.shape != self.encoder.shape:
            raise ValueError(f"filter bases must both be {width} x s, got "
                             f"{self.encoder.shape} and {self.decoder.shape}")

    @property
    def channels(self) -> int:
        return self.encoder.shape[1]

    @classmethod
    def from_svd(cls, F, d1: int, d2: int, s: int | None = None) -> "FilterBank":
        """``Psi = Psi_t =`` leading right singular vectors of ``H(F)``."""
        _, sv, vt = np.linalg.svd(block_hankel(F, d1, d2).matrix, full_matrices=True)
        if s is None:
            s = d1 * d2
        basis = vt[:s].T
        return cls(basis, basis.copy(), d1, d2)

    def projection(self) -> np.ndarray:
        """``Psi @ Psi_t.T``; the projector onto the row space when the bases are matched."""
        return self.encoder @ self.decoder.T

    def encoder_filters(self, alpha: float = 1.0) -> np.ndarray:
        """Encoder taps ``(s, d1, d2)``, scaled by ``1 / alpha``; applied as correlations."""
        return self._arrange(self.encoder) / alpha

    def decoder_filters(self) -> np.ndarray:
        """Decoder taps ``(s, d1, d2)`` including the ``1 / (d1 d2)`` unlift weight."""
        return self._arrange(self.decoder) / (self.d1 * self.d2)

    def _arrange(self, basis):
        # vec stacks columns: basis[c * d1 + j, k] -> taps[k, j, c]
        return basis.T.reshape(-1, self.d2, self.d1).transpose(0, 2, 1)


@dataclass
class FrameletCoefficients:
    values: np.ndarray
    plane_shape: tuple

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("framelet coefficients must be finite")


def _plane(F) -> np.ndarray:
    if isinstance(F, RxXmitPlane):
        return F.zero_filled()
    return np.asarray(F, dtype=np.float64)


def _vec_planes(planes: np.ndarray) -> np.ndarray:
    # (s, n1, n2) -> (n1 n2, s) with the column-stacking order of the lift rows
    s = planes.shape[0]
    return planes.transpose(0, 2, 1).reshape(s, -1).T


def _unvec_planes(mat: np.ndarray, shape) -> np.ndarray:
    n1, n2 = shape
    return mat.T.reshape(-1, n2, n1).transpose(0, 2, 1)


def _correlate(F: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """``out[i, b] = sum_{j,c} F[(i+j) % n1, (b+c) % n2] * taps[j, c]``."""
    spec = np.fft.fft2(F) * np.conj(np.fft.fft2(taps, s=F.shape))
    return np.real(np.fft.ifft2(spec))


def framelet_decompose(F, ops: FrameOperators, bank: FilterBank,
                       path: str = "conv") -> FrameletCoefficients:
    arr = _plane(F)
    if path == "matrix":
        H = block_hankel(arr, bank.d1, bank.d2).matrix
        C = ops.pool.T @ H @ bank.encoder / ops.alpha
    elif path == "conv":
        taps = bank.encoder_filters(ops.alpha)
        channels = np.stack([_correlate(arr, t) for t in taps])
        C = ops.pool.T @ _vec_planes(channels)
    else:
        raise ValueError(f"unknown path {path!r}")
    return FrameletCoefficients(C, arr.shape)


def framelet_reconstruct(C: FrameletCoefficients, ops: FrameOperators, bank: FilterBank,
                         path: str = "conv", relu: bool = False) -> np.ndarray:
    """Map coefficients back to the plane; ``relu`` rectifies them first."""
    coef = np.maximum(C.values, 0.0) if relu else C.values
    n1, n2 = C.plane_shape
    Z = ops.unpool @ coef
    if path == "matrix":
        lifted = BlockHankel(Z @ bank.decoder.T, (n1, n2, bank.d1, bank.d2))
        return unlift(lifted)
    if path == "conv":
        planes = _unvec_planes(Z, (n1, n2))
        taps = bank.decoder_filters()
        return sum(circular_convolve(p, t) for p, t in zip(planes, taps))
    raise ValueError(f"unknown path {path!r}")

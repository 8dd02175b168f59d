"""Low-rank Hankel matrix completion (ALOHA) by factorized ADMM.

Solves

    min  ||U||_F^2 / 2 + ||V||_F^2 / 2
    s.t. H_{d1,d2|N}({M_i}) = U V^T,   P_Lambda[M_i] = P_Lambda[F_i]

with the splitting of the lifted variable and a scaled dual ``L``:

    M   <- unlift(U V^T - L)             then reset the measured entries
    U   <- mu (H(M) + L) V (I + mu V^T V)^-1
    V   <- mu (H(M) + L)^T U (I + mu U^T U)^-1
    L   <- L + H(M) - U V^T

The ``(I + mu ...)`` systems are the two ``s x s`` solves per iteration.
Data are rescaled internally so the zero-filled lift has unit spectral norm,
which makes ``mu`` dimensionless.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .hankel import BlockHankel, RxXmitPlane, _lift_indices, numerical_rank, unlift_sum
from .sampling import apply_mask

__all__ = ["AlohaParams", "AlohaReport", "aloha_complete", "estimate_rank_for", "lifted_objective"]


@dataclass
class AlohaParams:
    """Solver settings.

    ``rank_s=None`` estimates the factor width from the zero-filled lift at
    ``rank_tol``.  ``admm_mu`` is the penalty in normalized units (the initial
    lift is scaled to spectral norm 1).
    """

    d1: int = 7
    d2: int = 7
    num_frames: int | None = None
    rank_s: int | None = None
    rank_tol: float = 1e-8
    admm_mu: float = 1.0
    max_iters: int = 50
    convergence_tol: float = 1e-6

    def width(self, n_frames: int) -> int:
        return self.d1 * self.d2 * n_frames


@dataclass
class AlohaReport:
    iterations: int = 0
    objective: list = field(default_factory=list)
    initial_objective: float = 0.0
    data_residual: float = 0.0
    lift_residual: float = 0.0
    converged: bool = False
    warning: bool = False
    rank_s: int = 0
    wall_ms: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def _frames_to_arrays(frames):
    values, measured = [], []
    for item in frames:
        plane, mask = item if isinstance(item, tuple) else (item, None)
        if mask is not None:
            plane = apply_mask(plane, mask)
        elif not isinstance(plane, RxXmitPlane):
            plane = RxXmitPlane(plane)
        values.append(plane.zero_filled())
        measured.append(plane.measured)
    values = np.stack(values)
    measured = np.stack(measured)
    if len({v.shape for v in values}) != 1:
        raise ValueError("all frames must share one shape")
    return values, measured


class _Lifter:
    """Lift/unlift of a stack of frames with precomputed gather indices."""

    def __init__(self, n1, n2, d1, d2, n_frames):
        self.dims = (n1, n2, d1, d2, n_frames)
        rows, cols = _lift_indices(n1, n2, d1, d2)
        self.flat = rows * n2 + cols
        self.width = d1 * d2

    def lift(self, stack: np.ndarray) -> np.ndarray:
        flat = stack.reshape(stack.shape[0], -1)
        return np.hstack([f[self.flat] for f in flat])

    def unlift(self, mat: np.ndarray) -> np.ndarray:
        return unlift_sum(BlockHankel(mat, self.dims)) / self.width


def lifted_objective(U, V) -> float:
    return 0.5 * (float(np.sum(U * U)) + float(np.sum(V * V)))


def estimate_rank_for(frames, params: AlohaParams | None = None) -> int:
    """Numerical rank of the zero-filled extended lift, clamped to ``[1, w - 1]``."""
    params = params or AlohaParams()
    values, _ = _frames_to_arrays(frames)
    n_frames, n1, n2 = values.shape
    lifter = _Lifter(n1, n2, params.d1, params.d2, n_frames)
    r = numerical_rank(lifter.lift(values), params.rank_tol)
    return int(np.clip(r, 1, params.width(n_frames) - 1))


def aloha_complete(frames, params: AlohaParams | None = None):
    """Complete missing entries of ``frames`` jointly.

    ``frames`` is a list of ``(plane, mask)`` pairs (or of ``RxXmitPlane`` with
    missing flags).  Returns ``(planes, report)`` where ``planes`` is a list of
    arrays whose measured entries equal the input bit-exactly.
    """
    params = params or AlohaParams()
    t0 = time.perf_counter()
    values, measured = _frames_to_arrays(frames)
    n_frames, n1, n2 = values.shape
    if params.num_frames is not None and params.num_frames != n_frames:
        raise ValueError(f"expected {params.num_frames} frames, got {n_frames}")
    if not measured.reshape(n_frames, -1).any(axis=1).all():
        raise ValueError("every frame needs at least one measured entry")
    width = params.width(n_frames)
    rank_s = params.rank_s if params.rank_s is not None else estimate_rank_for(
        [RxXmitPlane(v, ~m) for v, m in zip(values, measured)], params)
    if not 1 <= rank_s <= width:
        raise ValueError(f"rank {rank_s} outside [1, {width}]")
    report = AlohaReport(rank_s=rank_s)

    if measured.all():
        report.iterations = 1
        report.converged = True
        report.wall_ms = 1e3 * (time.perf_counter() - t0)
        return [v.copy() for v in values], report

    lifter = _Lifter(n1, n2, params.d1, params.d2, n_frames)
    X0 = lifter.lift(values)
    u, s, vt = np.linalg.svd(X0, full_matrices=False)
    scale = s[0] if s[0] > 0 else 1.0
    root = np.sqrt(s[:rank_s] / scale)
    U = u[:, :rank_s] * root
    V = vt[:rank_s].T * root
    # the zero-filled point is feasible; its surrogate value is its nuclear norm
    report.initial_objective = float(s.sum())

    data = values / scale
    mu = params.admm_mu
    eye = np.eye(rank_s)
    L = np.zeros_like(X0)
    M = data.copy()
    best = (np.inf, M)
    for it in range(1, params.max_iters + 1):
        M_prev = M
        M = lifter.unlift(U @ V.T - L)
        M[measured] = data[measured]
        HM = lifter.lift(M)
        T = HM + L
        U = mu * (T @ V) @ np.linalg.inv(eye + mu * (V.T @ V))
        V = mu * (T.T @ U) @ np.linalg.inv(eye + mu * (U.T @ U))
        gap = HM - U @ V.T
        L += gap
        report.objective.append(lifted_objective(U, V) * scale)
        lift_res = np.linalg.norm(gap) / max(np.linalg.norm(HM), 1e-300)
        if lift_res < best[0]:
            best = (lift_res, M)
        change = np.linalg.norm(M - M_prev) / max(np.linalg.norm(M_prev), 1e-300)
        report.iterations = it
        report.lift_residual = float(lift_res)
        if change < params.convergence_tol:
            report.converged = True
            break

    if not report.converged:
        report.warning = True
        report.lift_residual = float(best[0])
        M = best[1]
        warnings.warn(f"ALOHA stopped after {params.max_iters} iterations without converging",
                      RuntimeWarning, stacklevel=2)
    out = M * scale
    out[measured] = values[measured]
    report.data_residual = float(np.abs(out[measured] - values[measured]).max(initial=0.0))
    report.wall_ms = 1e3 * (time.perf_counter() - t0)
    return [o for o in out], report

"""SGD training of :class:`FrameletNet` on the plane-wise l2 loss."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .network import FrameletNet, plane_scale

__all__ = ["TrainHyper", "TrainingReport", "TrainingDivergedError", "train", "train_curriculum",
           "prepare_pairs"]


@dataclass
class TrainHyper:
    """Desk-scale defaults: lr 1e-3 halved every 50 epochs, weight decay 1e-4."""

    epochs: int = 100
    batch_size: int = 16
    lr: float = 1e-3
    lr_decay: float = 0.5
    lr_decay_every: int = 50
    weight_decay: float = 1e-4
    momentum: float = 0.9
    seed: int = 0
    dtype: torch.dtype = torch.float32
    log_path: str | None = None
    time_budget_s: float | None = None

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** (epoch // self.lr_decay_every)


@dataclass
class TrainingReport:
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    epochs_run: int = 0
    steps: int = 0
    diverged: bool = False
    wall_s: float = 0.0


class TrainingDivergedError(RuntimeError):
    def __init__(self, report: TrainingReport):
        super().__init__(f"training diverged at epoch {report.epochs_run}")
        self.report = report


def prepare_pairs(dataset, dtype=np.float64):
    """Stack ``(Y, F)`` pairs and normalize each by the RMS of its input.

    The result has ``dtype``; float32 halves the footprint of large sets.
    """
    if isinstance(dataset, tuple) and len(dataset) == 2 and np.ndim(dataset[0]) == 3:
        Y, F = (np.asarray(a, dtype=dtype) for a in dataset)
    else:
        if not len(dataset):
            raise ValueError("training set is empty")
        Y = np.stack([np.asarray(y, dtype=dtype) for y, _ in dataset])
        F = np.stack([np.asarray(f, dtype=dtype) for _, f in dataset])
    if Y.shape != F.shape:
        raise ValueError(f"input and target shapes differ: {Y.shape} vs {F.shape}")
    scale = plane_scale(Y)
    safe = np.where(scale > 0, scale, 1.0)[:, None, None].astype(dtype)
    return Y / safe, F / safe


def train(net: FrameletNet, dataset, hyper: TrainHyper | None = None):
    """Minimize ``sum_i ||F_i - net(Y_i)||^2`` (as a batch mean) with SGD.

    Returns ``(net, report)``; raises :class:`TrainingDivergedError` when the
    loss becomes non-finite.
    """
    hyper = hyper or TrainHyper()
    Y, F = prepare_pairs(dataset, torch.empty(0, dtype=hyper.dtype).numpy().dtype)
    net.to(hyper.dtype)
    Yt = torch.as_tensor(Y, dtype=hyper.dtype)[:, None]
    Ft = torch.as_tensor(F, dtype=hyper.dtype)[:, None]
    n = len(Yt)
    gen = torch.Generator().manual_seed(hyper.seed)
    opt = torch.optim.SGD(net.parameters(), lr=hyper.lr, momentum=hyper.momentum,
                          weight_decay=hyper.weight_decay)
    report = TrainingReport()
    t0 = time.perf_counter()
    log = None
    if hyper.log_path:
        log = open(hyper.log_path, "w", newline="")
        writer = csv.writer(log)
        writer.writerow(["epoch", "loss", "lr"])
    try:
        net.train()
        for epoch in range(hyper.epochs):
            lr = hyper.lr_at(epoch)
            for group in opt.param_groups:
                group["lr"] = lr
            order = torch.randperm(n, generator=gen)
            total, seen = 0.0, 0
            out_of_time = False
            for start in range(0, n, hyper.batch_size):
                idx = order[start:start + hyper.batch_size]
                if len(idx) < 2 and net.config.batch_norm and n > 1:
                    continue
                opt.zero_grad()
                loss = torch.mean((net(Yt[idx]) - Ft[idx]) ** 2)
                if not torch.isfinite(loss):
                    report.diverged = True
                    raise TrainingDivergedError(report)
                loss.backward()
                opt.step()
                total += loss.item() * len(idx)
                seen += len(idx)
                report.steps += 1
                # the budget is checked per step so a long epoch cannot overrun it
                if hyper.time_budget_s and time.perf_counter() - t0 > hyper.time_budget_s:
                    out_of_time = True
                    break
            epoch_loss = total / max(seen, 1)
            report.losses.append(epoch_loss)
            report.lrs.append(lr)
            report.epochs_run = epoch + 1
            if log:
                writer.writerow([epoch, f"{epoch_loss:.8g}", f"{lr:.3g}"])
            if not math.isfinite(epoch_loss):
                report.diverged = True
                raise TrainingDivergedError(report)
            if out_of_time:
                break
    finally:
        report.wall_s = time.perf_counter() - t0
        if log:
            log.close()
    net.trained_shape = tuple(Y.shape[1:])
    net.eval()
    return net, report


def train_curriculum(net: FrameletNet, pretrain_set, finetune_set,
                     pre: TrainHyper | None = None, fine: TrainHyper | None = None):
    """Pre-train on one sampling scheme, then fine-tune on another."""
    net, first = train(net, pretrain_set, pre)
    net.trained_shape = None
    net, second = train(net, finetune_set, fine)
    return net, (first, second)

"""Encoder-decoder CNN for Rx-Xmit / Rx-SL plane interpolation.

Topology (no spatial pooling): ``layers - 1`` blocks of 3x3 conv -> batch-norm
-> ReLU followed by a 1x1 linear head.  The 3x3 blocks are split into
``2 * skips + 1`` consecutive stages (encoder stages, a bottleneck, decoder
stages); the output of encoder stage ``i`` is concatenated onto the input of
the mirrored decoder stage ``2 * skips - i``.  Earlier stages receive the
extra layer when the block count does not divide evenly.  With
``extra_depth`` every stage gets one more block, which is the variant used
for sub-sampling ratios above 4.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import torch
from torch import nn

__all__ = [
    "NetConfig",
    "PAPER_PRESET",
    "DESK_PRESET",
    "FrameletNet",
    "build_network",
    "count_parameters",
    "interpolate_planes",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]


@dataclass(frozen=True)
class NetConfig:
    layers: int = 10
    channels: int = 16
    skips: int = 2
    batch_norm: bool = True
    padding: str = "circular"
    extra_depth: bool = False

    def stage_sizes(self) -> list[int]:
        body = self.layers - 1
        n_stages = 2 * self.skips + 1
        base, rem = divmod(body, n_stages)
        sizes = [base + (i < rem) for i in range(n_stages)]
        if self.extra_depth:
            sizes = [s + 1 for s in sizes]
        return sizes

    def validate(self):
        if self.layers < 1 or self.channels < 1 or self.skips < 0:
            raise ValueError(f"invalid network configuration {self}")
        if self.padding not in ("circular", "zeros"):
            raise ValueError(f"padding must be 'circular' or 'zeros', got {self.padding!r}")
        if self.layers == 1 and self.skips:
            raise ValueError("a head-only network cannot have skip connections")
        if self.layers > 1 and self.layers - 1 < 2 * self.skips + 1:
            raise ValueError(f"{self.layers - 1} conv blocks cannot fill {2 * self.skips + 1} stages")

    @property
    def conv_layers(self) -> int:
        return sum(self.stage_sizes()) + 1 if self.layers > 1 else 1

    def for_ratio(self, ratio: float) -> "NetConfig":
        return replace(self, extra_depth=ratio > 4)


PAPER_PRESET = NetConfig(layers=28, channels=64, skips=4)
DESK_PRESET = NetConfig(layers=10, channels=16, skips=2)


def _block(in_ch, out_ch, cfg: NetConfig) -> nn.Sequential:
    conv = nn.Conv2d(in_ch, out_ch, 3, padding=1, padding_mode=cfg.padding, bias=not cfg.batch_norm)
    parts = [conv]
    if cfg.batch_norm:
        parts.append(nn.BatchNorm2d(out_ch))
    parts.append(nn.ReLU(inplace=False))
    return nn.Sequential(*parts)


class FrameletNet(nn.Module):
    """Single-channel plane in, single-channel plane out, same spatial size."""

    def __init__(self, config: NetConfig = DESK_PRESET):
        super().__init__()
        config.validate()
        self.config = config
        self.trained_shape = None
        self.stages = nn.ModuleList()
        ch = config.channels
        in_ch = 1
        if config.layers > 1:
            for idx, size in enumerate(config.stage_sizes()):
                blocks = []
                for b in range(size):
                    if b == 0:
                        cin = in_ch + (ch if idx > config.skips else 0)
                    else:
                        cin = ch
                    blocks.append(_block(cin, ch, config))
                self.stages.append(nn.Sequential(*blocks))
                in_ch = ch
        self.head = nn.Conv2d(in_ch, 1, 1)
        self.reset_parameters()

    def reset_parameters(self, generator: torch.Generator | None = None):
        """Xavier (Glorot) Gaussian weights, zero biases, unit BN scale."""
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                fan_out = m.out_channels * m.kernel_size[0] * m.kernel_size[1]
                std = (2.0 / (fan_in + fan_out)) ** 0.5
                with torch.no_grad():
                    m.weight.copy_(torch.randn(m.weight.shape, generator=generator) * std)
                    if m.bias is not None:
                        m.bias.zero_()
            elif isinstance(m, nn.BatchNorm2d):
                m.reset_parameters()
                m.reset_running_stats()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = self.config.skips
        saved = []
        for idx, stage in enumerate(self.stages):
            if idx > skips:
                x = torch.cat([x, saved[2 * skips - idx]], dim=1)
            x = stage(x)
            if idx < skips:
                saved.append(x)
        return self.head(x)


def build_network(config: NetConfig = DESK_PRESET, seed: int | None = None) -> FrameletNet:
    net = FrameletNet(config)
    if seed is not None:
        net.reset_parameters(torch.Generator().manual_seed(seed))
    return net


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def plane_scale(planes: np.ndarray) -> np.ndarray:
    """Per-plane RMS over the nonzero (measured) entries; 0 for empty planes."""
    flat = planes.reshape(planes.shape[0], -1)
    nz = np.count_nonzero(flat, axis=1)
    energy = np.einsum("ij,ij->i", flat, flat, dtype=np.float64)
    return np.sqrt(np.divide(energy, nz, out=np.zeros(len(flat)), where=nz > 0))


def interpolate_planes(net: FrameletNet, planes, batch_size: int = 64,
                       keep_measured: np.ndarray | None = None) -> np.ndarray:
    """Inference on zero-filled planes ``(n, n1, n2)`` (or a single plane).

    Each plane is divided by its RMS before the network and multiplied back
    afterwards; all-zero planes map to zero.  ``keep_measured`` (a boolean
    array broadcastable to the planes) copies the measured inputs through.
    """
    arr = np.asarray(planes)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    if net.trained_shape is not None and tuple(arr.shape[1:]) != tuple(net.trained_shape):
        raise ValueError(f"network was trained on {tuple(net.trained_shape)} planes, got {arr.shape[1:]}")
    param = next(net.parameters())
    scale = plane_scale(arr)
    safe = np.where(scale > 0, scale, 1.0)
    out = np.zeros(arr.shape, dtype=np.float64)
    was_training = net.training
    net.eval()
    with torch.no_grad():
        for start in range(0, len(arr), batch_size):
            sl = slice(start, start + batch_size)
            x = torch.as_tensor(arr[sl] / safe[sl, None, None], dtype=param.dtype)
            y = net(x[:, None])[:, 0].double().numpy()
            out[sl] = y * scale[sl, None, None]
    net.train(was_training)
    if keep_measured is not None:
        out = np.where(keep_measured, arr, out)
    return out[0] if single else out


# -- FNW1 checkpoints -----------------------------------------------------------

_MAGIC = b"FNW1"
_LEN = struct.Struct("<I")


class CheckpointError(ValueError):
    pass


def save_checkpoint(net: FrameletNet, path, extra: dict | None = None) -> None:
    """``b"FNW1"``, u32 LE descriptor length, JSON descriptor, then every
    state-dict tensor as f32 LE in state-dict order."""
    state = net.state_dict()
    descriptor = {
        "architecture": asdict(net.config),
        "trained_shape": list(net.trained_shape) if net.trained_shape is not None else None,
        "tensors": [[name, list(t.shape)] for name, t in state.items()],
    }
    if extra:
        descriptor["extra"] = extra
    blob = json.dumps(descriptor, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_LEN.pack(len(blob)))
        fh.write(blob)
        for t in state.values():
            fh.write(t.detach().cpu().numpy().astype("<f4").tobytes())


def load_checkpoint(path, dtype=torch.float32) -> FrameletNet:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise CheckpointError(f"bad magic {raw[:4]!r}")
    (n,) = _LEN.unpack_from(raw, 4)
    descriptor = json.loads(raw[8:8 + n])
    net = FrameletNet(NetConfig(**descriptor["architecture"])).to(dtype)
    state = net.state_dict()
    offset = 8 + n
    loaded = {}
    for name, shape in descriptor["tensors"]:
        if name not in state:
            raise CheckpointError(f"unexpected tensor {name}")
        count = int(np.prod(shape))
        if offset + 4 * count > len(raw):
            raise CheckpointError(f"checkpoint truncated inside tensor {name}")
        values = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        loaded[name] = torch.as_tensor(values.copy()).to(state[name].dtype)
        offset += 4 * count
    if offset != len(raw):
        raise CheckpointError(f"{len(raw) - offset} trailing bytes after the last tensor")
    net.load_state_dict(loaded)
    if descriptor.get("trained_shape"):
        net.trained_shape = tuple(descriptor["trained_shape"])
    net.eval()
    return net

"""End-to-end orchestration: simulate, mask, interpolate, MLA, DAS, score.

Two processing orders are supported:

``rx_xmit_then_mla``
    interpolate each depth's Rx-Xmit plane, expand with 4MLA, beamform.
``mla_then_rx_sl``
    expand the (sub-sampled) transmits into scan lines first, interpolate the
    Rx-SL planes, beamform.  For ``rx_xmit_4x2`` the 48 surviving transmits
    are expanded with 8MLA to the same 384 lines.

The CNN in the 4x2 scheme is trained to output, for every line, the fully
sampled receive record of the nearest of all transmits, so its output is
beamformed with that provenance.  The other methods only fill receivers and
keep the provenance of the transmits that were actually fired.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .aloha import AlohaParams, aloha_complete
from .beamform import (BModeImage, RxSLCube, das_beamform, envelope_and_log, pixel_coordinates,
                       save_pgm, synthesize_scan_lines)
from .hankel import RxXmitPlane
from .interp_linear import LinearParams, linear_interpolate_shared
from .metrics import MetricsRow, RoiSpec, SsimParams, cnr, psnr, quantize_8bit, ssim, time_method
from .sampling import SamplingMask, frame_seed, make_rx_mask, make_rx_xmit_mask, save_mask
from .simcore import (Phantom, ProbeConfig, RFCube, linear_probe, random_phantom,
                      save_cubes, simulate_rf, simulate_sequence)

__all__ = [
    "SCHEMES",
    "PATHS",
    "METHODS",
    "ConfigError",
    "SchemeSpec",
    "PipelineConfig",
    "FrameResult",
    "scheme_mask",
    "mask_for_seed",
    "collect_pairs",
    "simulated_frames",
    "dataset_frames",
    "scheme_layout",
    "training_pairs",
    "interpolate",
    "process_frame",
    "run_pipeline",
    "build_manifest",
    "make_dataset",
    "load_dataset_frames",
    "cyst_roi",
    "evaluate_frames",
    "benchmark",
    "render_markdown",
    "phantom_for",
    "save_phantom",
    "load_phantom",
]


class ConfigError(ValueError):
    """Invalid pipeline configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class SchemeSpec:
    rx_factor: int
    xmit_factor: int
    default_path: str
    mla_factor: int


SCHEMES = {
    "rx_x4": SchemeSpec(4, 1, "rx_xmit_then_mla", 4),
    "rx_x8": SchemeSpec(8, 1, "rx_xmit_then_mla", 4),
    "rx_xmit_4x2": SchemeSpec(4, 2, "mla_then_rx_sl", 8),
}
PATHS = ("rx_xmit_then_mla", "mla_then_rx_sl")
METHODS = ("zero_fill", "linear", "aloha", "cnn")
REFERENCE_MLA = 4


@dataclass
class PipelineConfig:
    scheme: str = "rx_x4"
    path: str | None = None
    method: str = "zero_fill"
    checkpoint: str | None = None
    probe: ProbeConfig = field(default_factory=linear_probe)
    seed: int = 0
    out_dir: str | None = None
    rx_factor_override: int | None = None
    keep_measured: bool = True
    dynamic_range: float = 60.0
    aloha: AlohaParams = field(default_factory=lambda: AlohaParams(rank_s=20, max_iters=50))
    linear: LinearParams = field(default_factory=LinearParams)
    png: bool = True

    def __post_init__(self):
        if self.path is None and self.scheme in SCHEMES:
            self.path = SCHEMES[self.scheme].default_path

    def validate(self) -> "PipelineConfig":
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; choose from {sorted(SCHEMES)}")
        if self.path not in PATHS:
            raise ConfigError(f"unknown path {self.path!r}; choose from {PATHS}")
        if self.scheme == "rx_xmit_4x2" and self.path != "mla_then_rx_sl":
            raise ConfigError("scheme rx_xmit_4x2 requires path mla_then_rx_sl")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.rx_factor_override not in (None, 1, 2, 4, 8):
            raise ConfigError(f"rx factor override must be 1, 2, 4 or 8, got {self.rx_factor_override}")
        if self.dynamic_range <= 0:
            raise ConfigError("dynamic range must be positive")
        if self.method == "cnn":
            if not self.checkpoint:
                raise ConfigError("method cnn needs a checkpoint")
            if not Path(self.checkpoint).is_file():
                raise ConfigError(f"checkpoint {self.checkpoint} does not exist")
        return self

    @property
    def spec(self) -> SchemeSpec:
        return SCHEMES[self.scheme]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["probe"] = json.loads(self.probe.to_json())
        d["linear"]["order"] = list(self.linear.order)
        return d


# -- masks and plane layouts ----------------------------------------------------

def scheme_mask(config: PipelineConfig, frame_index: int) -> SamplingMask:
    """Mask of one frame, seeded from ``(config.seed, frame_index)``."""
    return mask_for_seed(config, frame_seed(config.seed, frame_index))


def mask_for_seed(config: PipelineConfig, seed: int) -> SamplingMask:
    spec = config.spec
    rx = config.rx_factor_override or spec.rx_factor
    probe = config.probe
    if spec.xmit_factor == 1:
        return make_rx_mask(probe.num_rx_active, probe.num_xmit, rx, seed)
    return make_rx_xmit_mask(probe.num_rx_active, probe.num_xmit, rx, spec.xmit_factor, seed)


@dataclass
class SchemeLayout:
    """Interpolation view of one frame.

    ``planes`` are the zero-filled planes (depth first), ``known`` their
    shared pattern.  ``input_lines`` / ``label_lines`` give the scan-line
    provenance of the fired data and of the fully sampled target;
    ``target`` holds the target planes.
    """

    planes: np.ndarray
    known: np.ndarray
    input_lines: RxSLCube
    label_lines: RxSLCube
    target: np.ndarray
    domain: str


def scheme_layout(cube: RFCube, mask: SamplingMask, config: PipelineConfig) -> SchemeLayout:
    spec = config.spec
    full = cube.data
    if config.path == "rx_xmit_then_mla":
        lines = synthesize_scan_lines(cube, REFERENCE_MLA)
        planes = np.where(mask.keep[None], full, 0.0).astype(np.float32)
        return SchemeLayout(planes, mask.keep.copy(), lines, lines, full, "rx_xmit")
    kept = mask.kept_columns() if spec.xmit_factor > 1 else np.arange(cube.config.num_xmit)
    if kept.size == 0:
        raise ValueError("mask keeps no transmit events")
    mla = spec.mla_factor if spec.xmit_factor > 1 else REFERENCE_MLA
    inp = synthesize_scan_lines(cube, mla, xmits=kept)
    label = synthesize_scan_lines(cube, mla, sl_positions=inp.sl_eta)
    known = mask.keep[:, inp.source_xmit]
    planes = np.where(known[None], inp.data, 0.0).astype(np.float32)
    return SchemeLayout(planes, known, inp, label, label.data, "rx_sl")


def training_pairs(cube: RFCube, mask: SamplingMask, config: PipelineConfig,
                   depth_index=None) -> tuple[np.ndarray, np.ndarray]:
    """Zero-filled input planes and fully sampled targets for one frame."""
    lay = scheme_layout(cube, mask, config)
    Y, F = lay.planes, lay.target
    if depth_index is not None:
        Y, F = Y[depth_index], F[depth_index]
    return np.asarray(Y), np.asarray(F)


# -- interpolation ----------------------------------------------------------------

class _NetCache:
    nets: dict = {}

    @classmethod
    def get(cls, path):
        from .framenet import load_checkpoint
        key = str(Path(path).resolve())
        if key not in cls.nets:
            cls.nets[key] = load_checkpoint(path)
        return cls.nets[key]


def interpolate(planes: np.ndarray, known: np.ndarray, config: PipelineConfig,
                net=None) -> np.ndarray:
    """Fill ``planes`` (``(depth, n1, n2)``, zero where ``~known``) with ``config.method``."""
    planes = np.asarray(planes, dtype=np.float64)
    method = config.method
    if known.all() or method == "zero_fill":
        return np.where(known[None], planes, 0.0)
    if method == "linear":
        return linear_interpolate_shared(planes, known, config.linear)
    if method == "aloha":
        out = np.zeros_like(planes)
        for i, plane in enumerate(planes):
            if not np.any(plane[known]):
                continue
            res, _ = aloha_complete([RxXmitPlane(plane, ~known)], config.aloha)
            out[i] = res[0]
        return out
    if method == "cnn":
        from .framenet import interpolate_planes
        net = net or _NetCache.get(config.checkpoint)
        keep = known[None] if config.keep_measured else None
        return interpolate_planes(net, planes, keep_measured=keep)
    raise ConfigError(f"unknown method {method!r}")


# -- frame processing ------------------------------------------------------------

@dataclass
class FrameResult:
    reference: BModeImage
    output: BModeImage
    row: MetricsRow
    interpolated: np.ndarray
    layout: SchemeLayout
    lines: RxSLCube


def cyst_roi(config: ProbeConfig, sl_eta, cyst, depth_samples: int | None = None) -> RoiSpec | None:
    """Anechoic disk at 0.8 r and background annulus 1.2 r .. 1.8 r of a cyst."""
    xz = pixel_coordinates(config, sl_eta, depth_samples)
    x, z, r = cyst
    dist = np.hypot(xz[..., 0] - x, xz[..., 1] - z)
    anechoic = dist < 0.8 * r
    background = (dist > 1.2 * r) & (dist < 1.8 * r)
    if not anechoic.any() or not background.any():
        return None
    return RoiSpec(background, anechoic)


def _bmode(lines: RxSLCube, data: np.ndarray, config: PipelineConfig) -> BModeImage:
    bf = das_beamform(lines.with_data(data))
    return envelope_and_log(bf, config.dynamic_range, config.probe.geometry)


def score(reference: BModeImage, output: BModeImage, roi: RoiSpec | None,
          ssim_params: SsimParams | None = None) -> tuple[float, float, float]:
    """``(cnr, psnr, ssim)`` on 8-bit quantized pre-conversion images."""
    dr = reference.dynamic_range
    ref8 = quantize_8bit(reference.pixels, dr)
    out8 = quantize_8bit(output.pixels, dr)
    c = cnr(out8, roi) if roi is not None else math.nan
    return c, psnr(ref8, out8), ssim(ref8, out8, ssim_params)


def process_frame(cube: RFCube, mask: SamplingMask, config: PipelineConfig, phantom: Phantom | None = None,
                  frame_id: str = "frame", net=None, reference: BModeImage | None = None) -> FrameResult:
    lay = scheme_layout(cube, mask, config)
    t0 = time.perf_counter()
    filled = interpolate(lay.planes, lay.known, config, net)
    ms = 1e3 * (time.perf_counter() - t0) / len(filled)
    if lay.domain == "rx_xmit":
        lines = synthesize_scan_lines(RFCube(filled.astype(np.float32), cube.config), REFERENCE_MLA)
    else:
        src = lay.label_lines if config.method == "cnn" else lay.input_lines
        lines = src.with_data(filled)
    if reference is None:
        reference = _bmode(lay.label_lines, lay.label_lines.data, config)
    output = envelope_and_log(das_beamform(lines), config.dynamic_range, config.probe.geometry)
    roi = None
    if phantom is not None and phantom.cysts:
        roi = cyst_roi(config.probe, lines.sl_eta, phantom.cysts[0], output.pixels.shape[0])
    c, p, s = score(reference, output, roi)
    row = MetricsRow(frame_id, config.scheme, config.method, c, p, s, ms)
    return FrameResult(reference, output, row, filled, lay, lines)


def phantom_for(seed: int, index: int, probe: ProbeConfig, **kwargs) -> tuple[Phantom, np.random.Generator]:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))
    return random_phantom(rng, probe, **kwargs), rng


def save_phantom(phantom: Phantom, path) -> None:
    np.savez(path, scatterers=phantom.scatterers, cysts=np.asarray(phantom.cysts, dtype=np.float64).reshape(-1, 3))


def load_phantom(path) -> Phantom:
    with np.load(path) as z:
        return Phantom(z["scatterers"], [tuple(map(float, c)) for c in z["cysts"]])


def run_pipeline(config: PipelineConfig, cube: RFCube | None = None, phantom: Phantom | None = None,
                 frame_index: int = 0) -> FrameResult:
    """Run one frame end to end; persist every stage when ``out_dir`` is set.

    Without ``cube`` a phantom is drawn from ``config.seed`` and simulated.
    """
    config.validate()
    if cube is None:
        if phantom is None:
            phantom, _ = phantom_for(config.seed, frame_index, config.probe)
        cube = simulate_rf(phantom, config.probe, frame_index=frame_index)
    mask = scheme_mask(config, frame_index)
    result = process_frame(cube, mask, config, phantom, frame_id=f"f{frame_index:04d}")
    if config.out_dir:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))
        save_cubes([cube], out / "input.rfc")
        save_mask(mask, out / "mask.bin")
        if phantom is not None:
            save_phantom(phantom, out / "phantom.npz")
        if result.layout.domain == "rx_xmit":
            save_cubes([RFCube(result.interpolated.astype(np.float32), cube.config, frame_index)],
                       out / "interpolated.rfc")
        else:
            np.save(out / "interpolated_rx_sl.npy", result.interpolated.astype(np.float32))
        save_pgm(result.reference, out / "reference.pgm", png=config.png)
        save_pgm(result.output, out / f"{config.method}.pgm", png=config.png)
        from .metrics import write_metrics_csv
        write_metrics_csv([result.row], out / "metrics.csv")
        if config.png:
            from .plotting import plot_comparison
            plot_comparison({"reference": result.reference, config.method: result.output},
                            config.probe, result.lines.sl_eta, out / "comparison.png")
    return result


# -- datasets -----------------------------------------------------------------------

def build_manifest(phantoms: int, frames_per: int, scheme: str, seed: int,
                   test_phantoms: int = 0, probe: ProbeConfig | None = None) -> dict:
    """Split by phantom 5:1 into train/val, plus ``test_phantoms`` extra.

    Every frame gets a global index; its mask seed is
    ``frame_seed(seed, index)``.
    """
    if phantoms < 1 or frames_per < 1 or test_phantoms < 0:
        raise ConfigError("phantom and frame counts must be at least 1")
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}")
    n_val = phantoms // 6
    splits = ["train"] * (phantoms - n_val) + ["val"] * n_val + ["test"] * test_phantoms
    frames = []
    for p, split in enumerate(splits):
        for f in range(frames_per):
            index = p * frames_per + f
            frames.append({
                "id": f"p{p:04d}_f{f:03d}",
                "phantom": p,
                "frame": f,
                "index": index,
                "split": split,
                "mask_seed": frame_seed(seed, index),
                "file": f"phantom_{p:04d}.rfc",
            })
    probe = probe or linear_probe()
    return {
        "scheme": scheme,
        "seed": seed,
        "phantoms": phantoms,
        "test_phantoms": test_phantoms,
        "frames_per": frames_per,
        "probe": json.loads(probe.to_json()),
        "frames": frames,
    }


def make_dataset(probe: ProbeConfig, phantoms: int, frames_per: int, scheme: str, seed: int,
                 out_dir, test_phantoms: int = 0, n_scatterers: int = 3000) -> dict:
    """Simulate every phantom's sequence into ``out_dir`` and write ``manifest.json``."""
    manifest = build_manifest(phantoms, frames_per, scheme, seed, test_phantoms, probe)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for p in range(phantoms + test_phantoms):
        phantom, rng = phantom_for(seed, p, probe, n_scatterers=n_scatterers)
        cubes = simulate_sequence(phantom, probe, frames_per, rng)
        save_cubes(cubes, out / f"phantom_{p:04d}.rfc")
        save_phantom(phantom, out / f"phantom_{p:04d}.npz")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest


def load_dataset_frames(out_dir, split: str):
    """Yield ``(entry, cube, phantom)`` for every frame of one split."""
    from .simcore import load_cubes
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    probe = ProbeConfig.from_json(json.dumps(manifest["probe"]))
    cache = {}
    for entry in manifest["frames"]:
        if entry["split"] != split:
            continue
        p = entry["phantom"]
        if p not in cache:
            cache.clear()
            cache[p] = (load_cubes(out / entry["file"], probe),
                        load_phantom(out / f"phantom_{p:04d}.npz"))
        cubes, phantom = cache[p]
        yield entry, cubes[entry["frame"]], phantom


def dataset_frames(out_dir, split: str, config: PipelineConfig):
    """``(frame_id, cube, mask, phantom)`` tuples of one split, masks from the manifest."""
    for entry, cube, phantom in load_dataset_frames(out_dir, split):
        yield entry["id"], cube, mask_for_seed(config, entry["mask_seed"]), phantom


def simulated_frames(config: PipelineConfig, count: int, first_index: int = 0,
                     n_scatterers: int = 3000):
    """Fresh phantoms ``first_index ..`` drawn from ``config.seed``, one frame each."""
    for i in range(first_index, first_index + count):
        phantom, _ = phantom_for(config.seed, i, config.probe, n_scatterers=n_scatterers)
        cube = simulate_rf(phantom, config.probe, frame_index=i)
        yield f"s{config.seed}_p{i:04d}", cube, scheme_mask(config, i), phantom


def collect_pairs(frames, config: PipelineConfig, planes_per_frame: int | None = None,
                  seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Stack training planes from frames, skipping planes with no measured energy.

    ``planes_per_frame`` draws that many depth planes per frame at random.
    """
    rng = np.random.default_rng(seed)
    Ys, Fs = [], []
    for _, cube, mask, _ in frames:
        Y, F = training_pairs(cube, mask, config)
        nz = np.flatnonzero(np.any(Y.reshape(len(Y), -1) != 0, axis=1))
        if planes_per_frame and planes_per_frame < nz.size:
            nz = np.sort(rng.choice(nz, planes_per_frame, replace=False))
        Ys.append(Y[nz])
        Fs.append(F[nz])
    if not Ys:
        raise ValueError("no frames to collect training planes from")
    return np.concatenate(Ys), np.concatenate(Fs)


# -- evaluation and benchmark ----------------------------------------------------------

def evaluate_frames(frames, config: PipelineConfig, methods=("zero_fill", "linear", "cnn"),
                    checkpoint: str | None = None) -> list[MetricsRow]:
    """Score every method on ``(frame_id, cube, mask, phantom)`` tuples.

    The reference image is computed once per frame and shared.
    """
    rows = []
    configs = {}
    for m in methods:
        cfg = replace(config, method=m, checkpoint=checkpoint if m == "cnn" else None, out_dir=None)
        configs[m] = cfg.validate()
    for frame_id, cube, mask, phantom in frames:
        ref = None
        for m in methods:
            res = process_frame(cube, mask, configs[m], phantom, frame_id, reference=ref)
            ref = res.reference
            rows.append(res.row)
    return rows


def benchmark(configs: list[PipelineConfig], frames_for, timing_planes: int = 8, reps: int = 10,
              out_dir=None) -> list[dict]:
    """Per-method, per-scheme timing and quality, one row per config.

    ``frames_for(scheme)`` returns the evaluation frames (as for
    :func:`evaluate_frames`).  Timing uses ``timing_planes`` depth planes of
    the first frame.
    """
    for cfg in configs:
        cfg.validate()
    rows = []
    cache = {}
    for cfg in configs:
        if cfg.scheme not in cache:
            cache[cfg.scheme] = list(frames_for(cfg.scheme))
        frames = cache[cfg.scheme]
        scored = evaluate_frames(frames, cfg, methods=(cfg.method,), checkpoint=cfg.checkpoint)
        _, cube, mask, _ = frames[0]
        lay = scheme_layout(cube, mask, cfg)
        energy = np.sqrt(np.mean(lay.planes.astype(np.float64) ** 2, axis=(1, 2)))
        picks = np.argsort(energy)[::-1][:timing_planes]
        planes = lay.planes[np.sort(picks)]
        net = _NetCache.get(cfg.checkpoint) if cfg.method == "cnn" else None
        timing = time_method(lambda ps: [interpolate(p[None], lay.known, cfg, net) for p in ps],
                             list(planes), reps=reps)
        rows.append({
            "method": cfg.method,
            "scheme": cfg.scheme,
            "path": cfg.path,
            "frames": len(scored),
            "psnr_db": float(np.mean([r.psnr for r in scored])),
            "ssim": float(np.mean([r.ssim for r in scored])),
            "cnr": float(np.nanmean([r.cnr for r in scored])) if any(
                np.isfinite(r.cnr) for r in scored) else math.nan,
            "ms_median": timing.median_ms,
            "ms_mean": timing.mean_ms,
        })
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_benchmark_csv(rows, out / "benchmark.csv")
        methods = sorted({r["method"] for r in rows}, key=METHODS.index)
        (out / "benchmark.md").write_text(render_markdown(rows, methods))
    return rows


BENCH_COLUMNS = ("method", "scheme", "path", "frames", "psnr_db", "ssim", "cnr", "ms_median", "ms_mean")


def write_benchmark_csv(rows, path) -> None:
    import csv
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: r[k] for k in BENCH_COLUMNS})


def render_markdown(rows, methods) -> str:
    """Timing/quality table, one line per (method, scheme)."""
    lines = ["| Method | Scheme | PSNR (dB) | SSIM | CNR | median ms/plane | mean ms/plane |",
             "|---|---|---|---|---|---|---|"]
    for m in methods:
        mine = [r for r in rows if r["method"] == m]
        if not mine:
            raise ValueError(f"no benchmark rows for method {m!r}")
        for r in mine:
            lines.append(f"| {m} | {r['scheme']} | {r['psnr_db']:.2f} | {r['ssim']:.4f} | {r['cnr']:.3f} "
                         f"| {r['ms_median']:.3f} | {r['ms_mean']:.3f} |")
    return "\n".join(lines) + "\n"

"""Command-line entry point: ``rfinterp <subcommand> ...``.

Exit codes: 0 on success, 2 when the configuration is invalid, 1 on any
runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import pipeline as pl

log = logging.getLogger("rfinterp")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _probe(args):
    from .simcore import ProbeConfig, convex_probe, linear_probe
    extra = {}
    if args.depth_samples:
        extra["depth_samples"] = args.depth_samples
    if args.tx_beam_width:
        extra["tx_beam_width"] = args.tx_beam_width
    try:
        if args.probe_config:
            base = ProbeConfig.from_json(Path(args.probe_config).read_text())
            return base.replace(**extra) if extra else base
        make = convex_probe if args.probe == "convex" else linear_probe
        return make(**extra)
    except (ValueError, KeyError, TypeError) as exc:
        raise pl.ConfigError(f"invalid probe configuration: {exc}") from exc
    except OSError as exc:
        raise pl.ConfigError(f"cannot read probe configuration: {exc}") from exc


def _config(args, **overrides) -> pl.PipelineConfig:
    fields = dict(
        scheme=getattr(args, "scheme", "rx_x4"),
        path=getattr(args, "path", None),
        method=getattr(args, "method", "zero_fill"),
        checkpoint=getattr(args, "checkpoint", None),
        probe=_probe(args),
        seed=args.seed,
        rx_factor_override=getattr(args, "rx_factor", None),
        keep_measured=not getattr(args, "no_keep_measured", False),
    )
    fields.update(overrides)
    return pl.PipelineConfig(**fields)


def _common(p, out_required=True):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=out_required, help="output file or directory")
    p.add_argument("--probe", choices=("linear", "convex"), default="linear")
    p.add_argument("--depth-samples", type=int, default=None)
    p.add_argument("--tx-beam-width", type=float, default=None, help="transmit beam waist in metres")
    p.add_argument("--probe-config", default=None, help="ProbeConfig JSON file (overrides --probe)")


def _scheme_args(p):
    p.add_argument("--scheme", choices=sorted(pl.SCHEMES), default="rx_x4")
    p.add_argument("--path", choices=pl.PATHS, default=None)
    p.add_argument("--rx-factor", type=int, default=None, help="override the scheme's Rx factor")


# -- subcommands ----------------------------------------------------------------------

def cmd_simulate(args):
    from .simcore import save_cubes, simulate_sequence
    probe = _probe(args)
    phantom, rng = pl.phantom_for(args.seed, args.phantom_index, probe, n_scatterers=args.scatterers)
    cubes = simulate_sequence(phantom, probe, args.frames, rng)
    out = Path(args.out)
    save_cubes(cubes, out)
    pl.save_phantom(phantom, out.with_suffix(".phantom.npz"))
    print(f"wrote {len(cubes)} frame(s) to {out}")


def cmd_mask(args):
    from .sampling import save_mask
    cfg = _config(args).validate()
    mask = pl.scheme_mask(cfg, args.frame)
    save_mask(mask, args.out)
    print(f"wrote {mask.kind} mask keeping {mask.fraction:.4f} of samples to {args.out}")


def cmd_interpolate(args):
    from .sampling import load_mask
    from .simcore import RFCube, load_cubes, save_cubes
    cfg = _config(args).validate()
    cubes = load_cubes(args.input)
    cube = cubes[args.frame]
    mask = load_mask(args.mask) if args.mask else pl.scheme_mask(cfg, args.frame)
    lay = pl.scheme_layout(cube, mask, cfg)
    filled = pl.interpolate(lay.planes, lay.known, cfg)
    out = Path(args.out)
    if lay.domain == "rx_xmit":
        save_cubes([RFCube(filled.astype(np.float32), cube.config, cube.frame_index)], out)
    else:
        lines = lay.label_lines if cfg.method == "cnn" else lay.input_lines
        np.savez(out, data=filled.astype(np.float32), sl_eta=lines.sl_eta,
                 source_xmit=lines.source_xmit, mla_factor=lines.mla_factor,
                 probe=cube.config.to_json())
    print(f"interpolated {len(filled)} planes with {cfg.method} -> {out}")


def cmd_beamform(args):
    from .beamform import RxSLCube, das_beamform, envelope_and_log, save_pgm, synthesize_scan_lines
    from .simcore import ProbeConfig, load_cubes
    src = Path(args.input)
    if src.suffix == ".npz":
        with np.load(src) as z:
            probe = ProbeConfig.from_json(str(z["probe"]))
            lines = RxSLCube(z["data"], int(z["mla_factor"]), z["source_xmit"], z["sl_eta"], probe)
    else:
        cube = load_cubes(src)[args.frame]
        probe = cube.config
        lines = synthesize_scan_lines(cube, args.mla)
    image = envelope_and_log(das_beamform(lines), args.dynamic_range, probe.geometry)
    save_pgm(image, args.out, png=args.png)
    print(f"wrote {image.pixels.shape[0]}x{image.pixels.shape[1]} B-mode image to {args.out}")


def _net_config(args):
    from .framenet import NetConfig
    cfg = NetConfig(layers=args.layers, channels=args.channels, skips=args.skips,
                    batch_norm=not args.no_batch_norm, padding=args.padding)
    try:
        cfg.validate()
    except ValueError as exc:
        raise pl.ConfigError(str(exc)) from exc
    return cfg


def cmd_train(args):
    from .framenet import TrainHyper, build_network, save_checkpoint, train
    from .plotting import plot_training_curve
    cfg = _config(args, method="zero_fill").validate()
    net_cfg = _net_config(args)
    if args.epochs < 1 or args.lr <= 0 or args.batch_size < 1:
        raise pl.ConfigError("epochs, learning rate and batch size must be positive")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.dataset:
        frames = pl.dataset_frames(args.dataset, "train", cfg)
    else:
        frames = pl.simulated_frames(cfg, args.frames, n_scatterers=args.scatterers)
    Y, F = pl.collect_pairs(frames, cfg, args.planes_per_frame, seed=args.seed)
    log_path = out.with_suffix(".log.csv")
    hyper = TrainHyper(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                       lr_decay_every=args.lr_decay_every, seed=args.seed, log_path=str(log_path),
                       time_budget_s=args.time_budget)
    net = build_network(net_cfg.for_ratio(cfg.spec.rx_factor * cfg.spec.xmit_factor)
                        if args.auto_depth else net_cfg, seed=args.seed)
    net, report = train(net, (Y, F), hyper)
    save_checkpoint(net, out, extra={"scheme": cfg.scheme, "path": cfg.path, "planes": int(len(Y)),
                                     "epochs": report.epochs_run})
    plot_training_curve(report.losses, out.with_suffix(".loss.png"), report.lrs)
    print(f"trained on {len(Y)} planes for {report.epochs_run} epochs "
          f"(final loss {report.losses[-1]:.4g}) -> {out}")


def _eval_frames(args, cfg):
    if getattr(args, "dataset", None):
        return list(pl.dataset_frames(args.dataset, "test", cfg))
    return list(pl.simulated_frames(cfg, args.frames, first_index=args.first_index,
                                    n_scatterers=args.scatterers))


def cmd_evaluate(args):
    from .metrics import write_metrics_csv
    from .plotting import plot_comparison, plot_metric_distributions
    methods = tuple(args.methods)
    cfg = _config(args, method=methods[0])
    for m in methods:
        replace(cfg, method=m, checkpoint=args.checkpoint if m == "cnn" else None).validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frames = _eval_frames(args, cfg)
    rows = pl.evaluate_frames(frames, cfg, methods, args.checkpoint)
    write_metrics_csv(rows, out / "metrics.csv")
    plot_metric_distributions(rows, out / "metrics.png")
    # example images of the first frame
    fid, cube, mask, phantom = frames[0]
    images = {}
    lines = None
    for m in methods:
        res = pl.process_frame(cube, mask, replace(cfg, method=m, checkpoint=args.checkpoint), phantom, fid)
        images.setdefault("reference", res.reference)
        images[m] = res.output
        lines = res.lines
    plot_comparison(images, cfg.probe, lines.sl_eta, out / "example.png", title=fid)
    summary = {m: {k: float(np.nanmean([getattr(r, k) for r in rows if r.method == m]))
                   for k in ("psnr", "ssim", "cnr", "ms")} for m in methods}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    for m, s in summary.items():
        print(f"{m:>10}: PSNR {s['psnr']:.2f} dB  SSIM {s['ssim']:.4f}  CNR {s['cnr']:.3f}")


def cmd_benchmark(args):
    from .plotting import plot_benchmark
    checkpoints = {}
    for item in args.checkpoint or []:
        scheme, _, path = item.partition("=")
        if not path:
            raise pl.ConfigError(f"--checkpoint expects SCHEME=PATH, got {item!r}")
        checkpoints[scheme] = path
    configs = []
    for scheme in args.schemes:
        for m in args.methods:
            cfg = _config(args, scheme=scheme, path=None, method=m,
                          checkpoint=checkpoints.get(scheme) if m == "cnn" else None)
            configs.append(cfg.validate())
    out = Path(args.out)
    frames_cache = {}

    def frames_for(scheme):
        if scheme not in frames_cache:
            frames_cache[scheme] = _eval_frames(args, _config(args, scheme=scheme, path=None))
        return frames_cache[scheme]

    rows = pl.benchmark(configs, frames_for, timing_planes=args.timing_planes, reps=args.reps, out_dir=out)
    plot_benchmark(rows, out / "benchmark.png")
    print((out / "benchmark.md").read_text())


# -- parser -------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rfinterp", description="RF sub-sampling interpolation toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate a phantom into an RFC1 file")
    _common(p)
    p.add_argument("--frames", type=int, default=1)
    p.add_argument("--scatterers", type=int, default=3000)
    p.add_argument("--phantom-index", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("mask", help="write the sampling mask of one frame")
    _common(p)
    _scheme_args(p)
    p.add_argument("--frame", type=int, default=0)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("interpolate", help="fill the missing samples of one frame")
    _common(p)
    _scheme_args(p)
    p.add_argument("--input", required=True)
    p.add_argument("--mask", default=None)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--method", choices=pl.METHODS, default="linear")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--no-keep-measured", action="store_true")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("beamform", help="MLA + DAS + log compression to PGM")
    _common(p)
    p.add_argument("--input", required=True, help="RFC1 cube or Rx-SL .npz from interpolate")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--mla", type=int, choices=(1, 2, 4, 8), default=4)
    p.add_argument("--dynamic-range", type=float, default=60.0)
    p.add_argument("--png", action="store_true")
    p.set_defaults(func=cmd_beamform)

    p = sub.add_parser("train", help="train the interpolation CNN")
    _common(p)
    _scheme_args(p)
    p.add_argument("--dataset", default=None, help="directory written by make_dataset")
    p.add_argument("--frames", type=int, default=8, help="simulated training frames without --dataset")
    p.add_argument("--scatterers", type=int, default=3000)
    p.add_argument("--planes-per-frame", type=int, default=None)
    p.add_argument("--layers", type=int, default=10)
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--skips", type=int, default=2)
    p.add_argument("--no-batch-norm", action="store_true")
    p.add_argument("--padding", choices=("circular", "zeros"), default="circular")
    p.add_argument("--auto-depth", action="store_true", help="extra layer per stage above ratio 4")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-decay-every", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--time-budget", type=float, default=None, help="seconds")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("evaluate", cmd_evaluate, "score methods on test frames"),
                                 ("benchmark", cmd_benchmark, "timing and quality table")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--dataset", default=None, help="use the test split of this dataset")
        p.add_argument("--frames", type=int, default=4)
        p.add_argument("--first-index", type=int, default=10_000)
        p.add_argument("--scatterers", type=int, default=3000)
        p.add_argument("--methods", nargs="+", choices=pl.METHODS, default=["zero_fill", "linear"])
        p.add_argument("--no-keep-measured", action="store_true")
        if name == "evaluate":
            _scheme_args(p)
            p.add_argument("--checkpoint", default=None)
        else:
            p.add_argument("--schemes", nargs="+", choices=sorted(pl.SCHEMES), default=["rx_x4"])
            p.add_argument("--checkpoint", action="append", help="SCHEME=PATH, repeatable")
            p.add_argument("--reps", type=int, default=10)
            p.add_argument("--timing-planes", type=int, default=8)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except pl.ConfigError as exc:
        print(f"rfinterp: configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported, not swallowed
        log.debug("failure", exc_info=True)
        print(f"rfinterp: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

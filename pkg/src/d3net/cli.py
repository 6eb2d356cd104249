"""Command-line entry point: dataset synthesis, training, restoration,
and benchmarking.

Conventions shared by all subcommands:
- exit 0 on success, 1 on runtime failure, 2 on usage error;
- `--config file.json` supplies tunables (same names as the long flags,
  dashes as underscores); explicit flags override the file; unknown keys
  are rejected;
- `--seed` makes every file output byte-reproducible;
- `--threads` is accepted for interface stability; execution is serial,
  which trivially satisfies the output-equality guarantee.
"""

import argparse
import json
import os
import sys
import time

from . import __version__
from .fusion import frame_average, fuse_sequence
from .imagecore import FrameSequence, load_image, psnr, save_image, ssim
from .models import (
    D2NetConfig,
    RdfdbkConfig,
    infer_d2net_config,
    infer_rdfdbk_config,
)
from .neuralcore import load_checkpoint, save_checkpoint
from .pipeline import TrainConfig, restore, train
from .turbsim import DatasetManifest, DegradationParams, generate_dataset

REPORT_FORMAT_VERSION = 1
METHODS = ("single", "average", "fused", "full")

_DEGRADE_DEFAULTS = {
    "frames": 1, "tilt_sigma": 1.0, "tilt_corr": 8.0, "blur_sigma": 1.2,
    "noise_sigma": 0.01, "seed": 0, "threads": 1,
}
_TRAIN_DEFAULTS = {
    "iters": 200, "patch": 16, "batch": 32, "width_multiplier": 0.125,
    "feature_channels": 32, "time_steps": 3, "residual_blocks": 0,
    "checkpoint_every": 0, "seed": 0, "threads": 1,
}
_RESTORE_DEFAULTS = {
    "levels": 2, "family": "haar", "roi": 7, "time_steps": 3,
    "seed": 0, "threads": 1,
}
_BENCH_DEFAULTS = {
    "levels": 2, "family": "haar", "roi": 7, "time_steps": 3,
    "timings": False, "seed": 0, "threads": 1,
}


class UsageError(Exception):
    """Bad invocation detectable before any real work starts."""


def _effective_config(args, defaults):
    """defaults <- config file <- explicit flags; unknown file keys rejected."""
    cfg = dict(defaults)
    path = getattr(args, "config", None)
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise UsageError(f"config file '{path}' is not valid JSON: {exc}")
        if not isinstance(doc, dict):
            raise UsageError(f"config file '{path}' must hold a JSON object")
        unknown = sorted(set(doc) - set(cfg))
        if unknown:
            raise UsageError(
                f"unknown config keys in '{path}': {', '.join(unknown)}"
            )
        cfg.update(doc)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if cfg.get("threads", 1) < 1:
        raise UsageError(f"--threads must be >= 1, got {cfg['threads']}")
    return cfg


def _json_dump(doc, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _require_file(path, what):
    if not os.path.isfile(path):
        raise OSError(f"{what} not found: {path}")


# ---------------------------------------------------------------------------
# degrade
# ---------------------------------------------------------------------------

def cmd_degrade(args):
    cfg = _effective_config(args, _DEGRADE_DEFAULTS)
    try:
        params = DegradationParams(
            tilt_sigma=cfg["tilt_sigma"], tilt_corr=cfg["tilt_corr"],
            blur_sigma=cfg["blur_sigma"], noise_sigma=cfg["noise_sigma"],
            frames=1, seed=cfg["seed"],
        )
        if cfg["frames"] < 1:
            raise ValueError(f"--frames must be >= 1, got {cfg['frames']}")
    except ValueError as exc:
        raise UsageError(str(exc))

    generate_dataset(args.clean, args.out, params, variations=cfg["frames"])
    manifest_path = os.path.join(args.out, "manifest.json")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    doc["config"] = cfg
    _json_dump(doc, manifest_path)
    print(manifest_path)
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args):
    cfg = _effective_config(args, _TRAIN_DEFAULTS)
    try:
        tc = TrainConfig(
            patch_size=cfg["patch"], batch_size=cfg["batch"],
            max_iterations=cfg["iters"], seed=cfg["seed"],
            checkpoint_every=cfg["checkpoint_every"],
        )
    except ValueError as exc:
        raise UsageError(str(exc))

    _require_file(args.manifest, "manifest")
    manifest = DatasetManifest.load(args.manifest)
    if not manifest.entries:
        raise ValueError(f"manifest '{args.manifest}' lists no entries")
    base_dir = os.path.dirname(os.path.abspath(args.manifest))
    in_channels = load_image(
        os.path.join(base_dir, manifest.entries[0].clean)
    ).channels

    rb = cfg["residual_blocks"]
    try:
        if args.model == "d2net":
            model_cfg = D2NetConfig(
                width_multiplier=cfg["width_multiplier"],
                residual_blocks_per_scale=rb or 2, in_channels=in_channels,
            )
        else:
            model_cfg = RdfdbkConfig(
                time_steps=cfg["time_steps"],
                feature_channels=cfg["feature_channels"],
                residual_blocks=rb or 4, in_channels=in_channels,
            )
    except ValueError as exc:
        raise UsageError(str(exc))

    os.makedirs(args.out, exist_ok=True)
    store, log = train(args.model, manifest, tc, base_dir=base_dir,
                       model_cfg=model_cfg, checkpoint_dir=args.out)

    ckpt_path = os.path.join(args.out, f"{args.model}.d3nc")
    save_checkpoint(store, ckpt_path)
    log_path = os.path.join(args.out, "train_log.jsonl")
    with open(log_path, "w", encoding="utf-8") as fh:
        for entry_ in log:
            fh.write(json.dumps(entry_) + "\n")
    _json_dump(
        {"format_version": 1, "tool_version": __version__,
         "model": args.model, "config": cfg,
         "checkpoint": os.path.basename(ckpt_path),
         "log": os.path.basename(log_path)},
        os.path.join(args.out, "train_meta.json"),
    )
    print(ckpt_path)
    return 0


# ---------------------------------------------------------------------------
# restore
# ---------------------------------------------------------------------------

def _load_frame_dir(path):
    """Frames in lexicographic filename order."""
    if not os.path.isdir(path):
        raise OSError(f"frame directory not found: {path}")
    names = sorted(
        n for n in os.listdir(path)
        if os.path.splitext(n)[1].lower() in (".png", ".pfm")
    )
    if not names:
        raise ValueError(f"no .png/.pfm frames in '{path}'")
    frames = [load_image(os.path.join(path, n)) for n in names]
    return FrameSequence(frames, source_id=os.path.basename(os.path.normpath(path)))


def _load_models(d2net_path, rdfdbk_path, time_steps):
    _require_file(d2net_path, "checkpoint")
    _require_file(rdfdbk_path, "checkpoint")
    d2_store = load_checkpoint(d2net_path)
    rd_store = load_checkpoint(rdfdbk_path)
    d2_cfg = infer_d2net_config(d2_store)
    rd_cfg = infer_rdfdbk_config(rd_store, time_steps=time_steps)
    return d2_store, rd_store, d2_cfg, rd_cfg


def cmd_restore(args):
    cfg = _effective_config(args, _RESTORE_DEFAULTS)
    seq = _load_frame_dir(args.frames)
    d2_store, rd_store, d2_cfg, rd_cfg = _load_models(
        args.d2net, args.rdfdbk, cfg["time_steps"]
    )
    dump_dir = args.dump_intermediate
    if dump_dir:
        os.makedirs(dump_dir, exist_ok=True)
    img = restore(seq, d2_store, rd_store, d2net_cfg=d2_cfg,
                  rdfdbk_cfg=rd_cfg, levels=cfg["levels"],
                  family=cfg["family"], roi_size=cfg["roi"],
                  dump_dir=dump_dir)
    parent = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(parent, exist_ok=True)
    save_image(img, args.out)
    print(args.out)
    return 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def _bench_sequence(seq, truth, stores_cfgs, cfg):
    d2_store, rd_store, d2_cfg, rd_cfg = stores_cfgs

    def fused_only():
        return fuse_sequence(seq, levels=cfg["levels"], family=cfg["family"],
                             roi_size=cfg["roi"]).fused_full

    def full():
        return restore(seq, d2_store, rd_store, d2net_cfg=d2_cfg,
                       rdfdbk_cfg=rd_cfg, levels=cfg["levels"],
                       family=cfg["family"], roi_size=cfg["roi"])

    producers = {
        "single": lambda: seq.frames[len(seq.frames) // 2],
        "average": lambda: frame_average(seq),
        "fused": fused_only,
        "full": full,
    }
    rows = []
    for method in METHODS:
        start = time.perf_counter()
        out = producers[method]()
        elapsed_ms = (time.perf_counter() - start) * 1000.0
        rows.append({
            "source_id": seq.source_id,
            "method": method,
            "psnr": float(psnr(out, truth)),
            "ssim": float(ssim(out, truth)),
            "wall_ms": elapsed_ms if cfg["timings"] else 0.0,
        })
    return rows


def _bench_table(rows, aggregates):
    head = f"{'source_id':<24} {'method':<8} {'psnr':>9} {'ssim':>7} {'wall_ms':>10}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(
            f"{r['source_id']:<24} {r['method']:<8} {r['psnr']:>9.4f} "
            f"{r['ssim']:>7.4f} {r['wall_ms']:>10.3f}"
        )
    lines.append("-" * len(head))
    for method in METHODS:
        a = aggregates[method]
        lines.append(
            f"{'mean':<24} {method:<8} {a['psnr']:>9.4f} {a['ssim']:>7.4f} "
            f"{'':>10}"
        )
    return "\n".join(lines) + "\n"


def cmd_bench(args):
    cfg = _effective_config(args, _BENCH_DEFAULTS)
    _require_file(args.manifest, "manifest")
    manifest = DatasetManifest.load(args.manifest)
    if not manifest.entries:
        raise ValueError(f"manifest '{args.manifest}' lists no entries")
    base_dir = os.path.dirname(os.path.abspath(args.manifest))
    stores_cfgs = _load_models(args.d2net, args.rdfdbk, cfg["time_steps"])

    rows = []
    for entry_ in manifest.entries:
        truth = load_image(os.path.join(base_dir, entry_.clean))
        frames = [load_image(os.path.join(base_dir, f)) for f in entry_.frames]
        source_id = os.path.splitext(os.path.basename(entry_.clean))[0]
        seq = FrameSequence(frames, source_id=source_id)
        rows.extend(_bench_sequence(seq, truth, stores_cfgs, cfg))

    aggregates = {}
    for method in METHODS:
        sub = [r for r in rows if r["method"] == method]
        aggregates[method] = {
            "psnr": sum(r["psnr"] for r in sub) / len(sub),
            "ssim": sum(r["ssim"] for r in sub) / len(sub),
        }
    report = {
        "format_version": REPORT_FORMAT_VERSION,
        "tool_version": __version__,
        "seed": cfg["seed"],
        "config": cfg,
        "rows": rows,
        "aggregates": aggregates,
    }
    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "report.json")
    _json_dump(report, report_path)
    with open(os.path.join(args.out, "table.txt"), "w", encoding="utf-8") as fh:
        fh.write(_bench_table(rows, aggregates))
    print(report_path)
    return 0


# ---------------------------------------------------------------------------
# parser / entry
# ---------------------------------------------------------------------------

def _add_common(sp):
    sp.add_argument("--seed", type=int, default=None,
                    help="base RNG seed (default: 0)")
    sp.add_argument("--config", metavar="JSON",
                    help="JSON file of tunables; explicit flags win")
    sp.add_argument("--threads", type=int, default=None,
                    help="worker count; accepted for interface stability, "
                         "execution is serial (default: 1)")


def _build_parser():
    p = argparse.ArgumentParser(
        prog="d3net",
        description="Turbulence-degraded image restoration: wavelet fusion "
                    "plus learned refinement.",
    )
    p.add_argument("--version", action="version", version=f"d3net {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command")

    d = sub.add_parser("degrade", help="synthesize a degraded dataset",
                       description="Apply seeded tilt/blur/noise degradation "
                                   "to a directory of clean images.")
    d.add_argument("--clean", required=True, help="directory of clean images")
    d.add_argument("--out", required=True, help="output dataset directory")
    d.add_argument("--frames", type=int, default=None,
                   help="degraded variations per clean image (default: 1)")
    d.add_argument("--tilt-sigma", type=float, default=None,
                   help="tilt displacement std in px (default: 1.0)")
    d.add_argument("--tilt-corr", type=float, default=None,
                   help="tilt correlation length in px (default: 8.0)")
    d.add_argument("--blur-sigma", type=float, default=None,
                   help="Gaussian blur std in px (default: 1.2)")
    d.add_argument("--noise-sigma", type=float, default=None,
                   help="additive noise std (default: 0.01)")
    _add_common(d)

    t = sub.add_parser("train", help="train one model on a dataset",
                       description="ADAM/L1 training of the restorer or the "
                                   "upsampler over a degradation dataset.")
    t.add_argument("--model", required=True, choices=("d2net", "rdfdbk"))
    t.add_argument("--manifest", required=True, help="dataset manifest JSON")
    t.add_argument("--out", default=".", help="output directory (default: .)")
    t.add_argument("--iters", type=int, default=None,
                   help="training iterations (default: 200)")
    t.add_argument("--patch", type=int, default=None,
                   help="square crop side in px (default: 16)")
    t.add_argument("--batch", type=int, default=None,
                   help="patches per iteration (default: 32)")
    t.add_argument("--width-multiplier", type=float, default=None,
                   help="restorer channel scale in (0,1]; 1.0 is the full "
                        "64/128/256/512 model (default: 0.125)")
    t.add_argument("--feature-channels", type=int, default=None,
                   help="upsampler feature width (default: 32)")
    t.add_argument("--time-steps", type=int, default=None,
                   help="upsampler recurrence depth (default: 3)")
    t.add_argument("--residual-blocks", type=int, default=None,
                   help="residual blocks (default: 2 per scale for d2net, "
                        "4 for rdfdbk)")
    t.add_argument("--checkpoint-every", type=int, default=None,
                   help="periodic checkpoint interval, 0 disables (default: 0)")
    _add_common(t)

    r = sub.add_parser("restore", help="restore one frame sequence",
                       description="Fuse a directory of frames (lexicographic "
                                   "order) and run the trained models.")
    r.add_argument("--frames", required=True, help="directory of input frames")
    r.add_argument("--d2net", required=True, help="restorer checkpoint")
    r.add_argument("--rdfdbk", required=True, help="upsampler checkpoint")
    r.add_argument("--out", required=True, help="output PNG path")
    r.add_argument("--levels", type=int, default=None,
                   help="wavelet decomposition levels (default: 2)")
    r.add_argument("--family", choices=("haar", "db2"), default=None,
                   help="wavelet family (default: haar)")
    r.add_argument("--roi", type=int, default=None,
                   help="fusion map window size (default: 7)")
    r.add_argument("--time-steps", type=int, default=None,
                   help="upsampler recurrence depth (default: 3)")
    r.add_argument("--dump-intermediate", metavar="DIR",
                   help="write fusion maps and per-stage PFMs here")
    _add_common(r)

    b = sub.add_parser("bench", help="benchmark methods over a dataset",
                       description="Evaluate single-frame, frame-average, "
                                   "fused-only, and full-pipeline restoration "
                                   "against ground truth.")
    b.add_argument("--manifest", required=True, help="dataset manifest JSON")
    b.add_argument("--d2net", required=True, help="restorer checkpoint")
    b.add_argument("--rdfdbk", required=True, help="upsampler checkpoint")
    b.add_argument("--out", required=True, help="output report directory")
    b.add_argument("--levels", type=int, default=None,
                   help="wavelet decomposition levels (default: 2)")
    b.add_argument("--family", choices=("haar", "db2"), default=None,
                   help="wavelet family (default: haar)")
    b.add_argument("--roi", type=int, default=None,
                   help="fusion map window size (default: 7)")
    b.add_argument("--time-steps", type=int, default=None,
                   help="upsampler recurrence depth (default: 3)")
    b.add_argument("--timings", action="store_true", default=None,
                   help="record real wall-clock times (non-reproducible); "
                        "otherwise wall_ms is 0.0")
    _add_common(b)

    return p


_DISPATCH = {
    "degrade": cmd_degrade,
    "train": cmd_train,
    "restore": cmd_restore,
    "bench": cmd_bench,
}


def entry(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (None, 0) else int(exc.code)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 2
    try:
        return _DISPATCH[args.command](args)
    except UsageError as exc:
        print(f"d3net: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"d3net: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(entry())

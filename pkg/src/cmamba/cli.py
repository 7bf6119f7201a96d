"""Command-line front end.

Subcommands: ``train``, ``encode``, ``decode``, ``eval``, ``probe``, ``bdrate``.

Exit codes: 0 success, 1 usage or invalid configuration, 2 file I/O,
3 malformed input data (bitstream, checkpoint, CSV, JSON), 4 numerical failure.
"""
import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import torch

from . import bitstream
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .coder import CoderError
from .config import ModelConfig
from .data import list_images, load_dataset, load_image, save_png, toy_corpus
from .metrics import MS_SSIM_MIN_SIZE, RDCurve, bd_rate, bpp, ms_ssim_db, psnr
from .model import CMamba
from .pipeline import ModelMismatchError, decode_image, encode_image, to_tensor, to_uint8
from .training import PRESETS, TrainConfig, train, write_log

__all__ = ["main", "build_parser", "load_config_file", "EXIT_OK", "EXIT_USAGE", "EXIT_IO",
           "EXIT_FORMAT", "EXIT_NUMERIC"]

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_FORMAT, EXIT_NUMERIC = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class FormatError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def load_config_file(path):
    """Read a JSON file with optional ``model`` and ``train`` sections."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise FormatError(f"{path}: top level must be an object")
    unknown = set(raw) - {"model", "train"}
    if unknown:
        raise UsageError(f"{path}: unknown config sections {sorted(unknown)}")
    return raw.get("model", {}), raw.get("train", {})


def _require_file(path, what):
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _require_dir(path, what):
    p = Path(path)
    if not p.is_dir():
        raise FileNotFoundError(f"{what} is not a directory: {p}")
    return p


def _writable(path):
    p = Path(path)
    if not p.parent.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {p.parent}")
    return p


def _model_and_train_configs(args):
    model_cfg, train_cfg = load_config_file(args.config) if args.config else ({}, {})
    model_cfg, train_cfg = dict(model_cfg), dict(train_cfg)
    preset = args.preset or train_cfg.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        train_cfg = {**PRESETS[preset], **train_cfg}
    if args.tiny:
        model_cfg = {**ModelConfig.tiny().to_dict(), **model_cfg}
    overrides = {"lmbda": args.lmbda, "metric": args.metric, "batch_size": args.batch_size,
                 "seed": args.seed, "log_path": args.log}
    train_cfg.update({k: v for k, v in overrides.items() if v is not None})
    if args.steps is not None or args.lr is not None or args.crop is not None:
        base = TrainConfig.from_dict(train_cfg).schedule
        steps = args.steps if args.steps is not None else sum(p.length for p in base)
        lr = args.lr if args.lr is not None else base[0].lr
        crop = args.crop if args.crop is not None else base[0].crop
        train_cfg["schedule"] = [[steps, lr, crop]]
        train_cfg["unit"] = "steps"
    for key in ("lmbda", "metric"):
        if key in train_cfg:
            model_cfg[key] = train_cfg[key]
    try:
        return ModelConfig.from_dict(model_cfg), TrainConfig.from_dict(train_cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc


def cmd_train(args):
    if args.data is None and not args.toy:
        raise UsageError("give a dataset directory or --toy")
    if args.data is not None:
        _require_dir(args.data, "dataset")
    out = _writable(args.out)
    if args.log:
        _writable(args.log)
    model_cfg, train_cfg = _model_and_train_configs(args)
    if args.data is not None:
        images = load_dataset(args.data)
    else:
        images = toy_corpus(args.toy, seed=train_cfg.seed)
    torch.manual_seed(train_cfg.seed)
    model = CMamba(model_cfg)

    def progress(entry):
        if args.verbose and (entry.step % 10 == 0 or entry.step == 1):
            print(f"step {entry.step}: loss {entry.loss:.4f} rate {entry.rate_bpp:.4f} bpp "
                  f"distortion {entry.distortion:.4f}", file=sys.stderr)

    model, log = train(model, train_cfg, images=images, progress=progress)
    save_checkpoint(out, model, train_cfg.to_dict())
    final = log[-1] if log else None
    print(f"trained {len(log)} steps" + (f", final loss {final.loss:.4f}" if final else ""))
    return EXIT_OK


def cmd_encode(args):
    ckpt = _require_file(args.checkpoint, "checkpoint")
    src = _require_file(args.image, "image")
    out = _writable(args.stream)
    image = load_image(src)
    model, _ = load_checkpoint(ckpt)
    enc = encode_image(image, model)
    out.write_bytes(enc.data)
    print(f"{enc.width}x{enc.height} {len(enc.data)} bytes {enc.bpp:.4f} bpp")
    return EXIT_OK


def cmd_decode(args):
    ckpt = _require_file(args.checkpoint, "checkpoint")
    src = _require_file(args.stream, "stream")
    out = _writable(args.image)
    data = src.read_bytes()
    model, _ = load_checkpoint(ckpt)
    x_hat = decode_image(data, model)
    header, _, _ = bitstream.deserialize(data)
    save_png(out, to_uint8(x_hat))
    rate = bpp(len(data), header.height, header.width)
    print(f"{header.width}x{header.height} {len(data)} bytes {rate:.4f} bpp")
    return EXIT_OK


def _parallel_map(fn, items, jobs):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _fmt(v):
    return "" if v is None else f"{v:.6f}"


def cmd_eval(args):
    ckpt = _require_file(args.checkpoint, "checkpoint")
    paths = list_images(_require_dir(args.images, "image directory"))
    if not paths:
        raise UsageError(f"no PNG/PPM images in {args.images}")
    out = _writable(args.csv)
    if args.curve:
        _writable(args.curve)
    model, _ = load_checkpoint(ckpt)

    def evaluate(path):
        image = load_image(path)
        enc = encode_image(image, model)
        rec = to_uint8(decode_image(enc.data, model))
        h, w = image.shape[:2]
        msssim = ms_ssim_db(image, rec) if min(h, w) >= MS_SSIM_MIN_SIZE else None
        return [path.name, w, h, len(enc.data), enc.bpp, psnr(image, rec), msssim]

    rows = _parallel_map(evaluate, paths, args.jobs)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image", "width", "height", "bytes", "bpp", "psnr", "ms_ssim_db"])
        for r in rows:
            writer.writerow([*r[:4], _fmt(r[4]), _fmt(r[5]), _fmt(r[6])])
        ms = [r[6] for r in rows if r[6] is not None]
        mean = ["mean", "", "", f"{np.mean([r[3] for r in rows]):.1f}", np.mean([r[4] for r in rows]),
                np.mean([r[5] for r in rows]), float(np.mean(ms)) if ms else None]
        writer.writerow([*mean[:4], _fmt(mean[4]), _fmt(mean[5]), _fmt(mean[6])])
    if args.curve:
        new = not Path(args.curve).exists()
        with open(args.curve, "a", newline="") as fh:
            writer = csv.writer(fh)
            if new:
                writer.writerow(["label", "bpp", "psnr", "ms_ssim_db"])
            writer.writerow([Path(ckpt).stem, _fmt(mean[4]), _fmt(mean[5]), _fmt(mean[6])])
    print(f"{len(rows)} images: {mean[4]:.4f} bpp, {mean[5]:.2f} dB PSNR")
    return EXIT_OK


def cmd_probe(args):
    from . import diagnostics as diag

    ckpt = _require_file(args.checkpoint, "checkpoint")
    paths = list_images(_require_dir(args.images, "image directory"))
    if not paths:
        raise UsageError(f"no PNG/PPM images in {args.images}")
    out = _writable(args.out)
    if args.plot:
        _writable(args.plot)
    model, _ = load_checkpoint(ckpt)
    images = _parallel_map(lambda p: to_tensor(load_image(p)), paths, args.jobs)
    for p, x in zip(paths, images):
        if x.shape[-2] % 64 or x.shape[-1] % 64:
            raise UsageError(f"{p.name}: probe images must have sides that are multiples of 64")
    if args.mode == "spectrum":
        feats = diag.collect_block_features(model, images)
        deltas = diag.spectrum_probe(feats)
        diag.write_spectrum_csv(out, deltas)
        if args.plot:
            diag.plot_spectrum(args.plot, [diag.spectrum_profile(f) for f in feats])
        print(" ".join(f"{d:.3f}" for d in deltas))
    else:
        y, mu, sigma = diag.collect_latent_residuals(model, images)
        cmap = diag.correlation_map(y, mu, sigma, radius=args.radius)
        diag.write_correlation_csv(out, cmap)
        if args.plot:
            diag.plot_correlation(args.plot, cmap)
        print(f"c(1,0)={cmap.at(1, 0):.3f} c(0,1)={cmap.at(0, 1):.3f}")
    return EXIT_OK


def cmd_bdrate(args):
    from .diagnostics import read_curve_csv

    anchor_path = _require_file(args.anchor, "anchor curve")
    test_path = _require_file(args.test, "test curve")
    try:
        anchor = RDCurve.from_points(read_curve_csv(anchor_path, args.quality), "anchor")
        test = RDCurve.from_points(read_curve_csv(test_path, args.quality), "test")
    except (KeyError, ValueError) as exc:
        raise FormatError(str(exc)) from exc
    try:
        value = bd_rate(anchor, test)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(f"{value:.2f}%")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="cmamba", description="Learned image compression with hybrid SSM/CNN transforms.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config", help="JSON file with 'model' and 'train' sections")
    p.add_argument("--data", help="directory of PNG/PPM training images")
    p.add_argument("--toy", type=int, nargs="?", const=32, metavar="N",
                   help="train on N synthetic images instead of --data (default 32)")
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.add_argument("--preset", help=f"training preset: {', '.join(sorted(PRESETS))}")
    p.add_argument("--tiny", action="store_true", help="use the small test architecture")
    p.add_argument("--lmbda", type=float)
    p.add_argument("--metric", choices=("mse", "ms-ssim"))
    p.add_argument("--steps", type=int, help="single-phase schedule of this many steps")
    p.add_argument("--lr", type=float)
    p.add_argument("--crop", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--log", help="loss log CSV (step, rate_bpp, distortion, loss)")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="compress one image")
    p.add_argument("checkpoint")
    p.add_argument("image")
    p.add_argument("stream")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decompress one stream to PNG")
    p.add_argument("checkpoint")
    p.add_argument("stream")
    p.add_argument("image")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="per-image bpp/PSNR/MS-SSIM for a directory")
    p.add_argument("checkpoint")
    p.add_argument("images")
    p.add_argument("csv")
    p.add_argument("--curve", help="append the mean point to this rate-distortion curve CSV")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("probe", help="feature-spectrum or latent-correlation diagnostics")
    p.add_argument("checkpoint")
    p.add_argument("images")
    p.add_argument("--mode", choices=("spectrum", "correlation"), required=True)
    p.add_argument("--out", required=True, help="CSV output")
    p.add_argument("--plot", help="optional PNG plot")
    p.add_argument("--radius", type=int, default=5)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("bdrate", help="BD-Rate of a test curve against an anchor curve")
    p.add_argument("anchor")
    p.add_argument("test")
    p.add_argument("--quality", help="quality column (default: quality, psnr or ms_ssim_db)")
    p.set_defaults(func=cmd_bdrate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        print("cmamba: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        code, msg = EXIT_USAGE, str(exc)
    except (FormatError, bitstream.BitstreamError, CheckpointError, ModelMismatchError,
            CoderError) as exc:
        code, msg = EXIT_FORMAT, str(exc)
    except (FloatingPointError, OverflowError) as exc:
        code, msg = EXIT_NUMERIC, str(exc)
    except OSError as exc:
        code, msg = EXIT_IO, str(exc)
    except ValueError as exc:
        code, msg = EXIT_USAGE, str(exc)
    print(f"cmamba: error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())

"""
Rate-distortion curves and BD-Rate: hybrid vs conv-only transforms
==================================================================

Trains one tiny model per lambda for each backbone, measures real coded
rate and PSNR on held-out synthetic images, and compares the curves.
Expect roughly 8 x (3 minutes hybrid + 20 s conv) at the default budget;
pass a smaller step count as the first argument for a quicker look.
"""
import sys
from pathlib import Path

import numpy as np
import torch

from cmamba import CMamba, ModelConfig, TrainConfig, bd_rate, decode_image, encode_image, psnr, train
from cmamba.data import toy_corpus
from cmamba.diagnostics import plot_rd_curves, write_curve_csv
from cmamba.metrics import RDCurve
from cmamba.pipeline import to_uint8

out = Path(__file__).resolve().parent / "out"
out.mkdir(exist_ok=True)
steps = int(sys.argv[1]) if len(sys.argv) > 1 else 200
lambdas = (0.0025, 0.0067, 0.013, 0.05)

train_images = toy_corpus(32)
test_images = toy_corpus(8, size=128, seed=7)


def point(backbone, lmbda):
    torch.manual_seed(0)
    model = CMamba(ModelConfig.tiny(backbone=backbone, lmbda=lmbda))
    cfg = TrainConfig(lmbda=lmbda, schedule=[[int(0.75 * steps), 4e-3, 64], [steps - int(0.75 * steps), 1e-3, 64]])
    model, _ = train(model, cfg, images=train_images)
    rates, quality = [], []
    for im in test_images:
        enc = encode_image(im, model)
        rates.append(enc.bpp)
        quality.append(psnr(im, to_uint8(decode_image(enc, model))))
    return np.mean(rates), np.mean(quality)


curves = []
for backbone in ("cnn", "hybrid"):
    pts = [point(backbone, lam) for lam in lambdas]
    for lam, (r, q) in zip(lambdas, pts):
        print(f"{backbone:7s} lambda={lam:<7} {r:.4f} bpp {q:.2f} dB")
    curve = RDCurve.from_points(pts, label=backbone)
    write_curve_csv(out / f"rd_{backbone}.csv", curve.bpp, curve.quality, backbone)
    curves.append(curve)

plot_rd_curves(out / "rd_curves.png", curves)
# tiny models at a handful of steps are noisy; the curve may not be monotone
try:
    print(f"BD-Rate hybrid vs cnn: {bd_rate(curves[0], curves[1]):+.2f}%")
except ValueError as exc:
    print("BD-Rate not defined for these curves:", exc)

"""
Quickstart: train a tiny codec on synthetic images, then compress one
==========================================================================

Runs in a few minutes on a laptop CPU. Outputs land in demos/out/.
"""
import sys
from pathlib import Path

import numpy as np
import torch

from cmamba import CMamba, ModelConfig, TrainConfig, decode_image, encode_image, psnr, train
from cmamba.data import save_png, toy_corpus
from cmamba.pipeline import to_uint8
from cmamba.training import PRESETS, smoothed

out = Path(__file__).resolve().parent / "out"
out.mkdir(exist_ok=True)
steps = int(sys.argv[1]) if len(sys.argv) > 1 else 200

# 32 soft-edged shapes over colour gradients, 64x64 each
images = toy_corpus(32)

torch.manual_seed(0)
model = CMamba(ModelConfig.tiny(lmbda=0.013))
print(sum(p.numel() for p in model.parameters()), "parameters")

cfg = TrainConfig(lmbda=0.013, log_path=str(out / "quickstart_log.csv"), **PRESETS["toy"])
if steps != 200:
    cfg = TrainConfig(lmbda=0.013, log_path=cfg.log_path, schedule=[[steps, 4e-3, 64]])
model, log = train(model, cfg, images=images)
ema = smoothed([e.loss for e in log])
print(f"loss {ema[0]:.3f} -> {ema[-1]:.3f} (smoothed)")

# a bigger, unseen image; encode pads it to a multiple of 64 internally
image = toy_corpus(1, size=192, seed=42)[0][:150, :180]
enc = encode_image(image, model)
rec = to_uint8(decode_image(enc, model))
print(f"{len(enc.data)} bytes, {enc.bpp:.3f} bpp (estimate {enc.estimated_bpp:.3f}), "
      f"PSNR {psnr(image, rec):.2f} dB")

flat = np.broadcast_to(image.reshape(-1, 3).mean(0), image.shape)
print(f"mean-colour baseline {psnr(image, flat):.2f} dB")

save_png(out / "quickstart_input.png", image)
save_png(out / "quickstart_decoded.png", rec)
(out / "quickstart.cmam").write_bytes(enc.data)

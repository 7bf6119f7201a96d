"""
Feature spectra and latent correlation
======================================

Two probes of what the transforms learned:

* Delta log-amplitude per analysis block (DC minus the Nyquist corner of the
  2D spectrum). Bigger means the block suppresses high frequencies more.
* Spatial correlation of the standardized latent residual (y - mu) / sigma.
  An entropy model that captures the spatial redundancy leaves little of it.

Needs checkpoints; by default trains scan-only and conv-only tiny models.
"""
import sys
from pathlib import Path

import torch

from cmamba import CMamba, ModelConfig, TrainConfig, load_checkpoint, save_checkpoint, train
from cmamba.data import toy_corpus
from cmamba.diagnostics import (collect_block_features, collect_latent_residuals, correlation_map,
                                plot_correlation, plot_spectrum, spectrum_probe, spectrum_profile)
from cmamba.pipeline import to_tensor
from cmamba.training import PRESETS

out = Path(__file__).resolve().parent / "out"
out.mkdir(exist_ok=True)

models = {}
for backbone in ("ssm", "cnn"):
    path = out / f"toy_{backbone}.npz"
    if path.exists() and "--retrain" not in sys.argv:
        models[backbone], _ = load_checkpoint(path)
        continue
    torch.manual_seed(0)
    model = CMamba(ModelConfig.tiny(backbone=backbone, lmbda=0.013))
    model, _ = train(model, TrainConfig(lmbda=0.013, **PRESETS["toy"]), images=toy_corpus(32))
    save_checkpoint(path, model)
    models[backbone] = model

held_out = [to_tensor(im) for im in toy_corpus(8, size=256, seed=303)]

for name, model in models.items():
    feats = collect_block_features(model, held_out)
    deltas = spectrum_probe(feats)
    print(name, "delta per block:", " ".join(f"{d:.3f}" for d in deltas))
    plot_spectrum(out / f"spectrum_{name}.png", [spectrum_profile(f) for f in feats])

    cmap = correlation_map(*collect_latent_residuals(model, held_out), radius=5)
    print(name, f"c(1,0)={cmap.at(1, 0):.3f} c(0,1)={cmap.at(0, 1):.3f}")
    plot_correlation(out / f"correlation_{name}.png", cmap, title=name)

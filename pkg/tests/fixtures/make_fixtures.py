"""Regenerate the regression fixtures in this directory.

Only rerun this after an intentional change to the model or the coder; the
regression test exists to catch unintentional ones.
"""
from pathlib import Path

import numpy as np
import torch

from cmamba.checkpoint import save_checkpoint
from cmamba.config import ModelConfig
from cmamba.data import save_png, toy_corpus
from cmamba.model import CMamba
from cmamba.pipeline import encode_image

HERE = Path(__file__).resolve().parent


def main():
    torch.manual_seed(0)
    model = CMamba(ModelConfig.tiny(lmbda=0.013)).eval()
    save_checkpoint(HERE / "tiny.npz", model)
    image = toy_corpus(1, size=128, seed=7)[0][:80, :112]
    save_png(HERE / "toy_80x112.png", np.ascontiguousarray(image))
    (HERE / "toy_80x112.cmam").write_bytes(encode_image(image, model).data)


if __name__ == "__main__":
    main()

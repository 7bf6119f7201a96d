"""Rate-distortion loss and the training loop."""
import csv
import dataclasses
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import torch

from .config import MSE_LAMBDAS, MSSSIM_LAMBDAS
from .data import load_dataset
from .entropy import estimate_rate
from .metrics import MS_SSIM_MIN_SIZE, ms_ssim
from .model import CMamba

__all__ = [
    "METRICS",
    "Phase",
    "TrainConfig",
    "PRESETS",
    "LogEntry",
    "distortion",
    "rd_loss",
    "train",
    "write_log",
    "smoothed",
]

METRICS = ("mse", "ms-ssim")


class Phase(NamedTuple):
    """A stretch of training at a fixed learning rate and crop size."""

    length: int
    lr: float
    crop: int


@dataclass
class TrainConfig:
    """Training hyperparameters.

    ``schedule`` is a sequence of :class:`Phase`; each phase length counts
    optimizer steps or passes over the dataset depending on ``unit``.
    """

    lmbda: float = 0.013
    metric: str = "mse"
    batch_size: int = 8
    schedule: Tuple[Phase, ...] = (Phase(150, 4e-3, 64), Phase(50, 1e-3, 64))
    unit: str = "steps"
    grad_clip: Optional[float] = 1.0
    seed: int = 0
    dataset: Optional[str] = None
    log_path: Optional[str] = None

    def __post_init__(self):
        self.schedule = tuple(Phase(int(p[0]), float(p[1]), int(p[2])) for p in self.schedule)
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if not (isinstance(self.lmbda, (int, float)) and math.isfinite(self.lmbda) and self.lmbda > 0):
            raise ValueError("lmbda must be a positive number")
        if self.unit not in ("steps", "epochs"):
            raise ValueError("unit must be 'steps' or 'epochs'")
        if self.batch_size < 1 or not self.schedule:
            raise ValueError("batch_size must be >= 1 and the schedule non-empty")
        for p in self.schedule:
            if p.length < 0 or p.lr <= 0 or p.crop < 64 or p.crop % 64:
                raise ValueError(f"invalid phase {p}: crop must be a positive multiple of 64")
            if self.metric == "ms-ssim" and p.crop < MS_SSIM_MIN_SIZE:
                raise ValueError(f"MS-SSIM training needs crops of at least {MS_SSIM_MIN_SIZE}")

    @property
    def in_known_set(self) -> bool:
        table = MSE_LAMBDAS if self.metric == "mse" else MSSSIM_LAMBDAS
        return any(abs(self.lmbda - v) <= 1e-9 * v for v in table)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["schedule"] = [list(p) for p in self.schedule]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


PRESETS = {
    # 40 epochs at 1e-4, 5 at 1e-5, then 5 more at 1e-5 on 512 crops.
    "full": dict(batch_size=8, unit="epochs",
                  schedule=(Phase(40, 1e-4, 256), Phase(5, 1e-5, 256), Phase(5, 1e-5, 512))),
    "toy": dict(batch_size=8, unit="steps", schedule=(Phase(150, 4e-3, 64), Phase(50, 1e-3, 64))),
}


class LogEntry(NamedTuple):
    step: int
    rate_bpp: float
    distortion: float
    loss: float


def distortion(x, x_hat, metric: str = "mse"):
    """``255^2 * MSE`` on [0, 1] pixels, or ``1 - MS-SSIM``."""
    if metric == "mse":
        return 255.0 ** 2 * torch.mean((x - x_hat) ** 2)
    if metric == "ms-ssim":
        return 1.0 - ms_ssim(x, x_hat, data_range=1.0)
    raise ValueError(f"metric must be one of {METRICS}")


def rd_loss(x, x_hat, rate_y, rate_z, lmbda: float, metric: str = "mse", dist=None):
    """``R_y + R_z + lmbda * D``; rates are in bits per pixel.

    ``dist`` may be given to skip recomputing the distortion.
    """
    if dist is None:
        dist = distortion(x, x_hat, metric)
    return rate_y + rate_z + lmbda * dist


def _rates(out, num_pixels):
    lik = out["likelihoods"]
    return estimate_rate(lik["y"]) / num_pixels, estimate_rate(lik["z"]) / num_pixels


def _random_crops(images, size, batch, rng):
    crops = []
    for k in rng.integers(0, len(images), batch):
        im = images[k]
        h, w = im.shape[:2]
        top = rng.integers(0, h - size + 1)
        left = rng.integers(0, w - size + 1)
        patch = im[top:top + size, left:left + size]
        if rng.random() < 0.5:
            patch = patch[:, ::-1]
        crops.append(np.ascontiguousarray(patch.transpose(2, 0, 1)))
    return torch.from_numpy(np.stack(crops)).float() / 255.0


def smoothed(values: Sequence[float], alpha: float = 0.05) -> np.ndarray:
    """Exponential moving average, seeded with the first value."""
    out = np.empty(len(values))
    acc = None
    for k, v in enumerate(values):
        acc = v if acc is None else (1 - alpha) * acc + alpha * v
        out[k] = acc
    return out


def write_log(path, entries: Sequence[LogEntry]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LogEntry._fields)
        for e in entries:
            w.writerow([e.step, f"{e.rate_bpp:.6f}", f"{e.distortion:.6f}", f"{e.loss:.6f}"])


def train(model: CMamba, config: TrainConfig, images=None, progress=None):
    """Optimize ``model`` in place with Adam on the rate-distortion loss.

    ``images`` is a list of ``(H, W, 3)`` uint8 arrays; if omitted the
    directory ``config.dataset`` is read. Returns ``(model, log)`` where ``log``
    has one :class:`LogEntry` per optimizer step.
    """
    if images is None:
        if config.dataset is None:
            raise ValueError("no training images and no dataset directory given")
        images = load_dataset(config.dataset)
    max_crop = max(p.crop for p in config.schedule)
    images = [np.asarray(im, dtype=np.uint8) for im in images]
    if not images:
        raise ValueError("training dataset is empty")
    too_small = [k for k, im in enumerate(images) if min(im.shape[:2]) < max_crop]
    if too_small:
        raise ValueError(f"{len(too_small)} training images are smaller than the {max_crop} crop")

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    gen = torch.Generator().manual_seed(config.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.schedule[0].lr)
    steps_per_epoch = max(1, math.ceil(len(images) / config.batch_size))

    model.train()
    log: List[LogEntry] = []
    step = 0
    for phase in config.schedule:
        for group in optimizer.param_groups:
            group["lr"] = phase.lr
        n_steps = phase.length * (steps_per_epoch if config.unit == "epochs" else 1)
        for _ in range(n_steps):
            x = _random_crops(images, phase.crop, config.batch_size, rng)
            out = model(x, quantizer="ste", generator=gen)
            rate_y, rate_z = _rates(out, x.shape[0] * x.shape[2] * x.shape[3])
            dist = distortion(x, out["x_hat"], config.metric)
            loss = rd_loss(x, out["x_hat"], rate_y, rate_z, config.lmbda, config.metric, dist=dist)
            if not torch.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss at step {step + 1}: rate_y={rate_y.item()}, "
                    f"rate_z={rate_z.item()}, distortion={dist.item()}")
            optimizer.zero_grad()
            loss.backward()
            if config.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()
            step += 1
            entry = LogEntry(step, (rate_y + rate_z).item(), dist.item(), loss.item())
            log.append(entry)
            if progress is not None:
                progress(entry)
    model.eval()
    if config.log_path:
        write_log(config.log_path, log)
    return model, log

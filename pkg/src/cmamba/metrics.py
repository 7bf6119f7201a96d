"""Quality and rate metrics: PSNR, MS-SSIM, bits per pixel and BD-Rate."""
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy.interpolate import PchipInterpolator

__all__ = [
    "DB_CAP",
    "MS_SSIM_WEIGHTS",
    "MS_SSIM_MIN_SIZE",
    "psnr",
    "ms_ssim",
    "ms_ssim_db",
    "bpp",
    "RDCurve",
    "bd_rate",
]

DB_CAP = 100.0
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MS_SSIM_MIN_SIZE = 176


def psnr(x, x_hat, max_val: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give :data:`DB_CAP`."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    mse = np.mean((x - x_hat) ** 2)
    if mse == 0:
        return DB_CAP
    return min(DB_CAP, 20 * math.log10(max_val) - 10 * math.log10(mse))


def _gauss_window(size=11, sigma=1.5, dtype=torch.float64):
    t = torch.arange(size, dtype=dtype) - (size - 1) / 2
    g = torch.exp(-t ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def _blur(x, win):
    c = x.shape[1]
    k = win.to(x.dtype)
    x = F.conv2d(x, k.view(1, 1, 1, -1).expand(c, 1, 1, -1), groups=c)
    return F.conv2d(x, k.view(1, 1, -1, 1).expand(c, 1, -1, 1), groups=c)


def _ssim_terms(x, y, win, data_range):
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_x, mu_y = _blur(x, win), _blur(y, win)
    sxx = _blur(x * x, win) - mu_x ** 2
    syy = _blur(y * y, win) - mu_y ** 2
    sxy = _blur(x * y, win) - mu_x * mu_y
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    lum = (2 * mu_x * mu_y + c1) / (mu_x ** 2 + mu_y ** 2 + c1)
    return (lum * cs).mean(dim=(2, 3)), cs.mean(dim=(2, 3))


def ms_ssim(x, y, data_range: float = 1.0, weights: Sequence[float] = MS_SSIM_WEIGHTS):
    """Five-scale MS-SSIM of ``(b, c, H, W)`` tensors, averaged over batch and channels.

    Gaussian window 11/1.5, valid filtering, 2x average pooling between scales.
    Differentiable, so it doubles as a training distortion.
    """
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    if min(x.shape[-2:]) < MS_SSIM_MIN_SIZE:
        raise ValueError(f"MS-SSIM needs images of at least {MS_SSIM_MIN_SIZE}x{MS_SSIM_MIN_SIZE}")
    win = _gauss_window()
    w = torch.as_tensor(weights, dtype=x.dtype)
    levels = []
    for level in range(len(weights)):
        ssim_val, cs = _ssim_terms(x, y, win, data_range)
        if level < len(weights) - 1:
            levels.append(torch.relu(cs))
            pad = [s % 2 for s in x.shape[2:]]
            x = F.avg_pool2d(x, 2, padding=pad)
            y = F.avg_pool2d(y, 2, padding=pad)
    levels.append(torch.relu(ssim_val))
    stacked = torch.stack(levels, dim=0)  # (levels, b, c)
    return torch.prod(stacked ** w[:, None, None], dim=0).mean()


def _as_nchw(img):
    if isinstance(img, torch.Tensor):
        t = img.double()
    else:
        arr = np.asarray(img, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[..., None]
        t = torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))
    while t.dim() < 4:
        t = t[None]
    return t


def ms_ssim_db(x, x_hat, data_range: float = 255.0) -> float:
    """MS-SSIM on the ``-10 log10(1 - MS-SSIM)`` scale.

    Accepts ``(H, W, C)`` arrays or channels-first tensors.
    """
    value = float(ms_ssim(_as_nchw(x), _as_nchw(x_hat), data_range))
    if value >= 1.0:
        return DB_CAP
    return min(DB_CAP, -10 * math.log10(1 - value))


def bpp(num_bytes: int, height: int, width: int) -> float:
    return 8.0 * num_bytes / (height * width)


@dataclass
class RDCurve:
    """Rate-distortion points: ``bpp`` and quality in dB, ordered by rate."""

    bpp: np.ndarray
    quality: np.ndarray
    label: str = field(default="")

    def __post_init__(self):
        self.bpp = np.asarray(self.bpp, dtype=np.float64)
        self.quality = np.asarray(self.quality, dtype=np.float64)
        if self.bpp.shape != self.quality.shape or self.bpp.ndim != 1:
            raise ValueError("bpp and quality must be 1-D arrays of equal length")
        order = np.argsort(self.bpp)
        self.bpp, self.quality = self.bpp[order], self.quality[order]

    @classmethod
    def from_points(cls, points, label=""):
        pts = np.asarray(points, dtype=np.float64)
        return cls(pts[:, 0], pts[:, 1], label)

    def validate(self):
        if len(self.bpp) < 4:
            raise ValueError(f"curve {self.label!r} needs at least 4 points")
        if (self.bpp <= 0).any() or np.any(np.diff(self.bpp) <= 0):
            raise ValueError(f"curve {self.label!r}: rates must be positive and strictly increasing")
        if np.any(np.diff(self.quality) <= 0):
            raise ValueError(f"curve {self.label!r}: quality must increase with rate")


def _as_curve(c):
    return c if isinstance(c, RDCurve) else RDCurve.from_points(c)


def bd_rate(anchor, test) -> float:
    """Average rate difference (percent) of ``test`` against ``anchor`` at equal quality.

    Log-rate is interpolated as a piecewise cubic Hermite (PCHIP) function of
    quality and integrated over the overlapping quality range. Negative values
    mean ``test`` needs fewer bits.
    """
    anchor, test = _as_curve(anchor), _as_curve(test)
    anchor.validate()
    test.validate()
    lo = max(anchor.quality[0], test.quality[0])
    hi = min(anchor.quality[-1], test.quality[-1])
    if hi <= lo:
        raise ValueError("rate-distortion curves do not overlap in quality")
    f_anchor = PchipInterpolator(anchor.quality, np.log(anchor.bpp))
    f_test = PchipInterpolator(test.quality, np.log(test.bpp))
    avg = (f_test.integrate(lo, hi) - f_anchor.integrate(lo, hi)) / (hi - lo)
    return float((math.exp(avg) - 1.0) * 100.0)

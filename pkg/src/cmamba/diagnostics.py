"""Feature-spectrum and latent-correlation probes, with CSV and plot output."""
import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Sequence

import numpy as np
import torch

__all__ = [
    "AMPLITUDE_FLOOR",
    "spectrum_profile",
    "spectrum_probe",
    "CorrelationMap",
    "correlation_map",
    "collect_block_features",
    "collect_latent_residuals",
    "write_curve_csv",
    "read_curve_csv",
    "write_spectrum_csv",
    "write_correlation_csv",
    "plot_rd_curves",
    "plot_correlation",
    "plot_spectrum",
]

AMPLITUDE_FLOOR = 1e-8


def _as_nchw(features):
    f = features.detach().double().cpu().numpy() if isinstance(features, torch.Tensor) else np.asarray(features, dtype=np.float64)
    if f.ndim == 3:
        f = f[None]
    if f.ndim != 4:
        raise ValueError(f"expected (N, C, H, W) or (C, H, W) features, got shape {f.shape}")
    return f


def spectrum_profile(features, points=None):
    """Mean log-amplitude along the half-diagonal of the 2D spectrum.

    Entry 0 is the DC term and the last entry is the (pi, pi) corner.
    Averaged over inputs and channels. Returns ``(normalized_freq, profile)``
    where frequencies are in units of pi.
    """
    f = _as_nchw(features)
    H, W = f.shape[-2:]
    if H < 8 or W < 8:
        raise ValueError(f"feature maps must be at least 8x8, got {H}x{W}")
    amp = np.abs(np.fft.fft2(f, axes=(-2, -1)))
    log_amp = np.log(np.maximum(amp, AMPLITUDE_FLOOR)).mean(axis=(0, 1))
    m = points or min(H, W) // 2
    t = np.linspace(0.0, 1.0, m + 1)
    rows = np.minimum(np.round(t * (H // 2)).astype(int), H - 1)
    cols = np.minimum(np.round(t * (W // 2)).astype(int), W - 1)
    return t, log_amp[rows, cols]


def spectrum_probe(features_per_block: Iterable) -> np.ndarray:
    """Delta log-amplitude (DC minus Nyquist corner) for each block's features."""
    deltas = []
    for feats in features_per_block:
        _, prof = spectrum_profile(feats)
        deltas.append(prof[0] - prof[-1])
    return np.asarray(deltas)


@dataclass
class CorrelationMap:
    """Normalized cross-correlation indexed by offsets; ``values[K + i, K + j]``
    pairs location ``(w, h)`` with ``(w + i, h + j)``."""

    values: np.ndarray
    radius: int

    def at(self, i: int, j: int) -> float:
        return float(self.values[self.radius + i, self.radius + j])

    @property
    def offsets(self):
        return np.arange(-self.radius, self.radius + 1)


def _shifted_pair(e, i, j):
    # i shifts along width, j along height
    H, W = e.shape[-2:]
    h0, h1 = max(0, -j), min(H, H - j)
    w0, w1 = max(0, -i), min(W, W - i)
    return e[..., h0:h1, w0:w1], e[..., h0 + j:h1 + j, w0 + i:w1 + i]


def correlation_map(y, mu, sigma, radius: int = 5) -> CorrelationMap:
    """Spatial correlation of the standardized residual ``(y - mu) / sigma``.

    Pearson correlation over all channels, images and valid positions for each
    offset ``(i, j)`` with ``|i|, |j| <= radius``.
    """
    y, mu, sigma = (_as_nchw(a) for a in (y, mu, sigma))
    if (sigma <= 0).any():
        raise ValueError("sigma must be positive")
    e = (y - mu) / sigma
    H, W = e.shape[-2:]
    if radius >= min(H, W):
        raise ValueError(f"radius {radius} too large for {H}x{W} latents")
    size = 2 * radius + 1
    values = np.empty((size, size))
    for i in range(-radius, radius + 1):
        for j in range(-radius, radius + 1):
            a, b = _shifted_pair(e, i, j)
            a = a.ravel() - a.mean()
            b = b.ravel() - b.mean()
            denom = np.sqrt(np.dot(a, a) * np.dot(b, b))
            values[radius + i, radius + j] = np.dot(a, b) / denom if denom > 0 else 0.0
    values[radius, radius] = 1.0
    return CorrelationMap(np.clip(values, -1.0, 1.0), radius)


@torch.no_grad()
def collect_block_features(model, images: Sequence[torch.Tensor]) -> List[np.ndarray]:
    """Outputs of every analysis-transform block, stacked over ``images``."""
    per_block = None
    for x in images:
        x = x if x.dim() == 4 else x[None]
        _, feats = model.g_a(x, return_features=True)
        if per_block is None:
            per_block = [[] for _ in feats]
        for store, f in zip(per_block, feats):
            store.append(f.double().numpy())
    return [np.concatenate(s) for s in per_block]


@torch.no_grad()
def collect_latent_residuals(model, images: Sequence[torch.Tensor]):
    """``(y, mu, sigma)`` from hard-quantized forward passes, stacked over images."""
    ys, mus, sigmas = [], [], []
    for x in images:
        x = x if x.dim() == 4 else x[None]
        out = model(x, quantizer="round")
        ys.append(out["y"].double().numpy())
        mus.append(out["mu"].double().numpy())
        sigmas.append(out["sigma"].double().numpy())
    return np.concatenate(ys), np.concatenate(mus), np.concatenate(sigmas)


def write_curve_csv(path, bpp, quality, label=""):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "bpp", "quality"])
        for b, q in zip(bpp, quality):
            w.writerow([label, f"{b:.6f}", f"{q:.6f}"])


def read_curve_csv(path, quality_column=None):
    """Read ``(bpp, quality)`` points; rows labelled ``mean`` are skipped.

    Quality comes from ``quality_column`` or the first of ``quality``, ``psnr``,
    ``ms_ssim_db`` present in the header.
    """
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no rows")
    cols = rows[0].keys()
    if "bpp" not in cols:
        raise ValueError(f"{path}: missing 'bpp' column")
    qcol = quality_column or next((c for c in ("quality", "psnr", "ms_ssim_db") if c in cols), None)
    if qcol is None or qcol not in cols:
        raise ValueError(f"{path}: no quality column")
    pts = [(float(r["bpp"]), float(r[qcol])) for r in rows
           if r.get("image", r.get("label", "")) != "mean"]
    return np.asarray(pts)


def write_spectrum_csv(path, deltas):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["block", "delta_log_amplitude"])
        for k, d in enumerate(deltas, 1):
            w.writerow([k, f"{d:.6f}"])


def write_correlation_csv(path, cmap: CorrelationMap):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "correlation"])
        for i in cmap.offsets:
            for j in cmap.offsets:
                w.writerow([int(i), int(j), f"{cmap.at(i, j):.6f}"])


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_rd_curves(path, curves, ylabel="PSNR (dB)"):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    for c in curves:
        ax.plot(c.bpp, c.quality, marker="o", label=c.label or None)
    ax.set_xlabel("bpp")
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    if any(c.label for c in curves):
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_correlation(path, cmap: CorrelationMap, title=""):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4.5, 4))
    k = cmap.radius
    # rows = height offset j, columns = width offset i
    im = ax.imshow(cmap.values.T, cmap="viridis", vmin=0, vmax=1,
                   extent=(-k - 0.5, k + 0.5, k + 0.5, -k - 0.5))
    for i in cmap.offsets:
        for j in cmap.offsets:
            ax.text(i, j, f"{cmap.at(i, j):.2f}", ha="center", va="center", fontsize=6, color="w")
    ax.set_xlabel("i")
    ax.set_ylabel("j")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_spectrum(path, profiles, labels=None):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    for k, (t, prof) in enumerate(profiles):
        label = labels[k] if labels else f"block {k + 1}"
        ax.plot(t, prof - prof[0], label=label)
    ax.set_xlabel("frequency (x pi)")
    ax.set_ylabel("relative log amplitude")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

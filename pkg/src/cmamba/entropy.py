"""Context-aware entropy model: channel groups, per-group Gaussian parameter
prediction from the hyper-prior and decoded groups, a factorized logistic prior
for the side information, and the matching bin likelihoods."""
import math
from typing import List, NamedTuple, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .ssm import SS2D, ChannelLayerNorm

__all__ = [
    "SIGMA_MIN",
    "P_MIN",
    "GaussianParams",
    "split_groups",
    "merge_groups",
    "round_half_away",
    "GroupParamPredictor",
    "FactorizedPrior",
    "gaussian_likelihood",
    "logistic_likelihood",
    "estimate_rate",
]

SIGMA_MIN = 1e-3
P_MIN = 2.0 ** -16


class GaussianParams(NamedTuple):
    mu: torch.Tensor
    sigma: torch.Tensor


def split_groups(y, groups: int) -> List[torch.Tensor]:
    """Split ``(b, M, h, w)`` into ``groups`` equal contiguous channel slices."""
    M = y.shape[1]
    if groups < 1 or M % groups:
        raise ValueError(f"{M} channels cannot be split into {groups} equal groups")
    return list(torch.split(y, M // groups, dim=1))


def merge_groups(groups) -> torch.Tensor:
    return torch.cat(list(groups), dim=1)


def round_half_away(x):
    """Round to nearest integer, ties away from zero."""
    return torch.sign(x) * torch.floor(torch.abs(x) + 0.5)


class GroupParamPredictor(nn.Module):
    """Mean/scale for latent group ``index`` (1-based).

    The hyper-prior and the decoded groups before ``index`` are squeezed by a
    1x1 convolution, passed through a residual SS2D scan and a residual
    layer-normed feed-forward layer. The first group sees a zero placeholder
    in place of decoded context.
    """

    def __init__(self, config: ModelConfig, index: int, ffn_ratio: int = 2):
        super().__init__()
        if not 1 <= index <= config.groups:
            raise ValueError(f"group index {index} outside [1, {config.groups}]")
        Mg = config.group_channels
        self.index = index
        self.group_channels = Mg
        self.autoregressive = config.autoregressive
        self.context_channels = Mg * max(index - 1, 1) if config.autoregressive else Mg
        self.in_channels = 2 * config.latent_channels + self.context_channels
        out = 2 * Mg
        self.squeeze = nn.Conv2d(self.in_channels, out, 1)
        self.ss2d = SS2D(out, config.d_state)
        self.norm = ChannelLayerNorm(out)
        self.ffn = nn.Sequential(
            nn.Conv2d(out, ffn_ratio * out, 1), nn.GELU(), nn.Conv2d(ffn_ratio * out, out, 1))

    def forward(self, phi, y_bar_prev: Optional[torch.Tensor] = None) -> GaussianParams:
        if y_bar_prev is None or self.index == 1 or not self.autoregressive:
            b, _, h, w = phi.shape
            y_bar_prev = phi.new_zeros(b, self.context_channels, h, w)
        if phi.shape[-2:] != y_bar_prev.shape[-2:]:
            raise ValueError("hyper-prior and decoded context are not spatially aligned")
        x = torch.cat([phi, y_bar_prev], dim=1)
        if x.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {x.shape[1]}")
        f_sq = self.squeeze(x)
        f_ssm = self.ss2d(f_sq) + f_sq
        out = self.ffn(self.norm(f_ssm)) + f_ssm
        mu, raw_scale = out.chunk(2, dim=1)
        return GaussianParams(mu, F.softplus(raw_scale) + SIGMA_MIN)


def _normal_cdf(x):
    return 0.5 * torch.erfc(-x / math.sqrt(2.0))


def gaussian_likelihood(y_hat, mu, sigma, floor: bool = True):
    """Probability mass of the unit-width bin centered on ``y_hat`` under N(mu, sigma)."""
    sigma = torch.clamp(torch.as_tensor(sigma), min=SIGMA_MIN)
    # evaluate on the lower tail side for precision
    v = -torch.abs(torch.as_tensor(y_hat) - mu)
    p = _normal_cdf((v + 0.5) / sigma) - _normal_cdf((v - 0.5) / sigma)
    return torch.clamp(p, min=P_MIN) if floor else p


def logistic_likelihood(z_hat, loc, scale, floor: bool = True):
    """Bin mass of a logistic distribution; used by the factorized side-information prior."""
    v = -torch.abs(torch.as_tensor(z_hat) - loc)
    p = torch.sigmoid((v + 0.5) / scale) - torch.sigmoid((v - 0.5) / scale)
    return torch.clamp(p, min=P_MIN) if floor else p


class FactorizedPrior(nn.Module):
    """Per-channel logistic prior over integer-valued side information."""

    def __init__(self, channels: int, init_scale: float = 1.0):
        super().__init__()
        self.loc = nn.Parameter(torch.zeros(channels))
        self.log_scale = nn.Parameter(torch.full((channels,), math.log(init_scale)))

    @property
    def scale(self):
        return torch.exp(self.log_scale)

    def likelihood(self, z_hat, floor: bool = True):
        loc = self.loc[None, :, None, None]
        scale = self.scale[None, :, None, None]
        return logistic_likelihood(z_hat, loc, scale, floor)


def estimate_rate(likelihoods) -> torch.Tensor:
    """Total information content ``sum(-log2 p)`` in bits."""
    p = torch.as_tensor(likelihoods)
    if (p <= 0).any() or (p > 1).any():
        raise ValueError("likelihoods must lie in (0, 1]")
    return -torch.log2(p).sum()

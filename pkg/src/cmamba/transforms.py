"""Analysis/synthesis transforms, hyper-encoder/decoder and latent residual prediction."""
import torch
import torch.nn as nn
import torch.nn.functional as F

from .ca_ssm import CASSMBlock
from .config import ModelConfig

__all__ = [
    "AnalysisTransform",
    "SynthesisTransform",
    "HyperEncoder",
    "HyperDecoder",
    "LatentResidualPredictor",
]

LATENT_INIT_GAIN = 10.0


def _down(c_in, c_out):
    return nn.Conv2d(c_in, c_out, 3, stride=2, padding=1)


class _Up(nn.Module):
    """Sub-pixel 2x upsampling."""

    def __init__(self, c_in, c_out):
        super().__init__()
        self.conv = nn.Conv2d(c_in, 4 * c_out, 3, padding=1)
        self.shuffle = nn.PixelShuffle(2)

    def forward(self, x):
        return self.shuffle(self.conv(x))


def _stage(config: ModelConfig, channels: int):
    return nn.Sequential(*(
        CASSMBlock(channels, config.d_state, config.backbone, config.fusion)
        for _ in range(config.blocks)
    ))


def _check(x, channels, name):
    if x.dim() != 4 or x.shape[1] != channels:
        raise ValueError(f"{name}: expected (b, {channels}, H, W), got {tuple(x.shape)}")


class AnalysisTransform(nn.Module):
    """Image ``(b, 3, H, W)`` in [0, 1] to latent ``(b, M, H/16, W/16)``."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        widths = (3, *config.widths)
        self.downs = nn.ModuleList(_down(widths[i], widths[i + 1]) for i in range(4))
        self.stages = nn.ModuleList(_stage(config, w) for w in config.widths)
        self.head = nn.Conv2d(config.widths[-1], config.latent_channels, 3, padding=1)
        # default init gives latents of std ~0.1, which all round to zero and
        # stall early training; start them a few quantization bins wide instead
        with torch.no_grad():
            self.head.weight.mul_(LATENT_INIT_GAIN)
            self.head.bias.mul_(LATENT_INIT_GAIN)

    def forward(self, x, return_features: bool = False):
        _check(x, 3, "analysis transform")
        if x.shape[-2] % 64 or x.shape[-1] % 64:
            raise ValueError(f"image size {tuple(x.shape[-2:])} is not a multiple of 64")
        # centre pixels to [-1, 1]; the synthesis transform undoes this
        x = 2.0 * x - 1.0
        features = []
        for down, stage in zip(self.downs, self.stages):
            x = down(x)
            for block in stage:
                x = block(x)
                features.append(x)
        y = self.head(x)
        return (y, features) if return_features else y


class SynthesisTransform(nn.Module):
    """Latent ``(b, M, h, w)`` to image ``(b, 3, 16h, 16w)``."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.latent_channels = config.latent_channels
        rev = config.widths[::-1]
        self.head = nn.Conv2d(config.latent_channels, rev[0], 3, padding=1)
        self.stages = nn.ModuleList(_stage(config, w) for w in rev)
        outs = (*rev[1:], 3)
        self.ups = nn.ModuleList(_Up(rev[i], outs[i]) for i in range(4))

    def forward(self, y, clamp: bool = True):
        _check(y, self.latent_channels, "synthesis transform")
        x = self.head(y)
        for stage, up in zip(self.stages, self.ups):
            x = up(stage(x))
        x = 0.5 * x + 0.5
        return x.clamp(0.0, 1.0) if clamp else x


class HyperEncoder(nn.Module):
    """Latent ``y`` to side information ``z`` at a quarter of the resolution."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        M, Ch = config.latent_channels, config.hyper_channels
        self.latent_channels = M
        self.proj = nn.Conv2d(M, Ch, 3, padding=1)
        self.down1 = _down(Ch, Ch)
        self.stage = _stage(config, Ch)
        self.down2 = _down(Ch, Ch)

    def forward(self, y):
        _check(y, self.latent_channels, "hyper encoder")
        if y.shape[-2] % 4 or y.shape[-1] % 4:
            raise ValueError(f"latent size {tuple(y.shape[-2:])} is not a multiple of 4")
        return self.down2(self.stage(self.down1(F.gelu(self.proj(y)))))


class HyperDecoder(nn.Module):
    """Quantized side information to the hyper-prior with ``2M`` channels at the latent resolution."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        M, Ch = config.latent_channels, config.hyper_channels
        self.hyper_channels = Ch
        self.up1 = _Up(Ch, Ch)
        self.stage = _stage(config, Ch)
        self.up2 = _Up(Ch, 3 * M // 2)
        self.out = nn.Conv2d(3 * M // 2, 2 * M, 3, padding=1)

    def forward(self, z_hat):
        _check(z_hat, self.hyper_channels, "hyper decoder")
        return self.out(F.gelu(self.up2(self.stage(self.up1(z_hat)))))


class LatentResidualPredictor(nn.Module):
    """Predict the rounding residual of group ``index`` (1-based) from the hyper-prior,
    the already decoded groups and the current quantized group.

    The output is squashed with ``0.5 * tanh`` so it never exceeds half a bin.
    """

    def __init__(self, config: ModelConfig, index: int, hidden=None):
        super().__init__()
        if not 1 <= index <= config.groups:
            raise ValueError(f"group index {index} outside [1, {config.groups}]")
        Mg = config.group_channels
        self.index = index
        self.in_channels = 2 * config.latent_channels + index * Mg
        hidden = hidden or max(Mg, config.latent_channels // 2)
        self.net = nn.Sequential(
            nn.Conv2d(self.in_channels, hidden, 3, padding=1), nn.GELU(),
            nn.Conv2d(hidden, hidden, 3, padding=1), nn.GELU(),
            nn.Conv2d(hidden, Mg, 3, padding=1),
        )
        # predict no correction until training says otherwise
        nn.init.zeros_(self.output_layer.weight)
        nn.init.zeros_(self.output_layer.bias)

    @property
    def output_layer(self):
        return self.net[-1]

    def forward(self, phi, y_bar_prev, y_hat_i):
        parts = [phi] if y_bar_prev is None else [phi, y_bar_prev]
        parts.append(y_hat_i)
        sizes = {p.shape[-2:] for p in parts}
        if len(sizes) != 1:
            raise ValueError("hyper-prior and latent groups are not spatially aligned")
        x = torch.cat(parts, dim=1)
        if x.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {x.shape[1]}")
        return 0.5 * torch.tanh(self.net(x))

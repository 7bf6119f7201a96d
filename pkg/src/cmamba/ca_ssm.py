"""Content-adaptive SSM block: a VSS path and a residual-convolution path fused
with input-dependent per-channel softmax weights."""
import torch
import torch.nn as nn
import torch.nn.functional as F

from .ssm import VSSBlock

__all__ = ["ResBlock", "DynamicFusion", "CASSMBlock", "BACKBONES", "FUSIONS"]

BACKBONES = ("hybrid", "ssm", "cnn")
FUSIONS = ("dynamic", "sum", "concat")
LOGIT_GAP_MAX = 15.0


class ResBlock(nn.Module):
    """``x + conv2(gelu(conv1(x)))`` with 3x3 same-size convolutions."""

    def __init__(self, channels: int, zero_init: bool = False):
        super().__init__()
        self.channels = channels
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        if zero_init:
            nn.init.zeros_(self.conv2.weight)
            nn.init.zeros_(self.conv2.bias)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != self.channels:
            raise ValueError(f"expected (b, {self.channels}, H, W) input, got {tuple(x.shape)}")
        return x + self.conv2(F.gelu(self.conv1(x)))


def _mlp(channels, hidden):
    return nn.Sequential(nn.Linear(channels, hidden), nn.GELU(), nn.Linear(hidden, channels))


class DynamicFusion(nn.Module):
    """Fuse two same-shaped maps as ``w(alpha * f_ssm + beta * f_cnn)``.

    ``alpha``/``beta`` are a two-way softmax of per-channel logits, each logit
    vector produced by its own MLP from the global max-pool of ``f_ssm + f_cnn``.
    """

    def __init__(self, channels: int, hidden=None):
        super().__init__()
        hidden = hidden or max(1, channels // 4)
        self.mlp_alpha = _mlp(channels, hidden)
        self.mlp_beta = _mlp(channels, hidden)
        self.w = nn.Conv2d(channels, channels, 1, bias=False)
        # start as the identity so the residual paths of both branches survive
        nn.init.dirac_(self.w.weight)

    def weights(self, f_ssm, f_cnn):
        """Per-channel ``(alpha, beta)``, each of shape ``(b, c)``."""
        pooled = torch.amax(f_ssm + f_cnn, dim=(2, 3))
        # two-way softmax == sigmoid of the logit gap; the clamp keeps both
        # weights strictly inside (0, 1) even in float32
        gap = torch.clamp(self.mlp_alpha(pooled) - self.mlp_beta(pooled), -LOGIT_GAP_MAX, LOGIT_GAP_MAX)
        return torch.sigmoid(gap), torch.sigmoid(-gap)

    def forward(self, f_ssm, f_cnn):
        if f_ssm.shape != f_cnn.shape:
            raise ValueError(f"shape mismatch: {tuple(f_ssm.shape)} vs {tuple(f_cnn.shape)}")
        alpha, beta = self.weights(f_ssm, f_cnn)
        mixed = alpha[..., None, None] * f_ssm + beta[..., None, None] * f_cnn
        return self.w(mixed)


class CASSMBlock(nn.Module):
    """VSS block and ResBlock in parallel, merged by :class:`DynamicFusion`.

    ``backbone`` and ``fusion`` select the ablation variants: ``"ssm"`` or
    ``"cnn"`` keep a single path, ``"sum"``/``"concat"`` replace the dynamic
    fusion with a plain sum or a 1x1 projection of the concatenation.
    """

    def __init__(self, channels: int, d_state: int = 4, backbone: str = "hybrid",
                 fusion: str = "dynamic"):
        super().__init__()
        if backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}")
        if fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}")
        self.channels = channels
        self.backbone = backbone
        self.fusion_mode = fusion
        self.vss = VSSBlock(channels, d_state) if backbone != "cnn" else None
        self.res = ResBlock(channels) if backbone != "ssm" else None
        self.fusion = None
        if backbone == "hybrid":
            if fusion == "dynamic":
                self.fusion = DynamicFusion(channels)
            elif fusion == "concat":
                self.fusion = nn.Conv2d(2 * channels, channels, 1)
                eye = torch.eye(channels)[..., None, None]
                with torch.no_grad():
                    self.fusion.weight.copy_(0.5 * torch.cat([eye, eye], dim=1))
                    self.fusion.bias.zero_()
            else:
                self.fusion = nn.Conv2d(channels, channels, 1, bias=False)
                with torch.no_grad():
                    self.fusion.weight.copy_(0.5 * torch.eye(channels)[..., None, None])

    def forward(self, x):
        if self.backbone == "ssm":
            return self.vss(x)
        if self.backbone == "cnn":
            return self.res(x)
        f_ssm, f_cnn = self.vss(x), self.res(x)
        if self.fusion_mode == "dynamic":
            return self.fusion(f_ssm, f_cnn)
        if self.fusion_mode == "concat":
            return self.fusion(torch.cat([f_ssm, f_cnn], dim=1))
        return self.fusion(f_ssm + f_cnn)

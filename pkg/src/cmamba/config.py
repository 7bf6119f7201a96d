"""Model configuration and the rate-distortion multiplier sets."""
import dataclasses
import json
import zlib
from dataclasses import dataclass, field
from typing import Optional, Tuple

from .ca_ssm import BACKBONES, FUSIONS

__all__ = ["ModelConfig", "MSE_LAMBDAS", "MSSSIM_LAMBDAS", "lambda_index", "lambda_from_index"]

# Multipliers used for the MSE- and MS-SSIM-optimized model families.
MSE_LAMBDAS = (0.0025, 0.0035, 0.0067, 0.0130, 0.0250, 0.0500)
MSSSIM_LAMBDAS = (3.0, 5.0, 8.0, 16.0, 36.0, 64.0)

CUSTOM_LAMBDA = 255


def lambda_index(lmbda, metric: str = "mse") -> int:
    """Index of ``lmbda`` in the known sets (MS-SSIM entries offset by 6); 255 if custom."""
    if lmbda is None:
        return CUSTOM_LAMBDA
    table = MSE_LAMBDAS if metric == "mse" else MSSSIM_LAMBDAS
    for i, v in enumerate(table):
        if abs(v - lmbda) <= 1e-9 * max(1.0, v):
            return i if metric == "mse" else i + len(MSE_LAMBDAS)
    return CUSTOM_LAMBDA


def lambda_from_index(index: int):
    if index < len(MSE_LAMBDAS):
        return MSE_LAMBDAS[index], "mse"
    if index < len(MSE_LAMBDAS) + len(MSSSIM_LAMBDAS):
        return MSSSIM_LAMBDAS[index - len(MSE_LAMBDAS)], "ms-ssim"
    return None, None


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``widths`` are the channel counts of the four analysis stages (the
    synthesis transform mirrors them). Every stage halves the resolution, so
    the latent ``y`` sits at 1/16 and the hyper-latent ``z`` at 1/64.
    """

    widths: Tuple[int, int, int, int] = (32, 48, 64, 96)
    latent_channels: int = 96
    hyper_channels: int = 64
    blocks: int = 1
    groups: int = 4
    d_state: int = 4
    backbone: str = "hybrid"
    fusion: str = "dynamic"
    autoregressive: bool = True
    quant_mode: str = "direct"
    lmbda: Optional[float] = None
    metric: str = "mse"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) != 4:
            raise ValueError("widths must list exactly four stage widths")
        counts = (*self.widths, self.latent_channels, self.hyper_channels,
                  self.blocks, self.groups, self.d_state)
        if min(counts) < 1:
            raise ValueError("all channel/block/group/state counts must be >= 1")
        if self.latent_channels % self.groups:
            raise ValueError(
                f"latent_channels={self.latent_channels} not divisible by groups={self.groups}")
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}")
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}")
        if self.quant_mode not in ("direct", "centered"):
            raise ValueError("quant_mode must be 'direct' or 'centered'")
        if self.metric not in ("mse", "ms-ssim"):
            raise ValueError("metric must be 'mse' or 'ms-ssim'")
        if self.lmbda is not None and not self.lmbda > 0:
            raise ValueError("lmbda must be positive")

    @classmethod
    def tiny(cls, **overrides):
        """A ~120k-parameter configuration for tests and toy training."""
        base = dict(widths=(8, 12, 16, 16), latent_channels=16, hyper_channels=8,
                    blocks=1, groups=4, d_state=4)
        base.update(overrides)
        return cls(**base)

    @property
    def group_channels(self) -> int:
        return self.latent_channels // self.groups

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    @property
    def config_id(self) -> int:
        """CRC32 of the architecture fields; written into every bitstream header."""
        arch = {k: v for k, v in self.to_dict().items() if k not in ("lmbda", "metric")}
        return zlib.crc32(json.dumps(arch, sort_keys=True).encode())

"""Image encoding and decoding through the range coder and container format."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from . import bitstream
from .coder import WINDOW, build_cdf, range_decode, range_encode, snap
from .config import lambda_index
from .entropy import P_MIN, gaussian_likelihood, merge_groups, round_half_away, split_groups
from .model import CMamba

__all__ = [
    "ALIGN",
    "MIN_SIZE",
    "EncodedImage",
    "ModelMismatchError",
    "to_tensor",
    "to_uint8",
    "pad_image",
    "encode_image",
    "decode_image",
]

ALIGN = 64
MIN_SIZE = 64


class ModelMismatchError(ValueError):
    """The stream was produced by a model with a different configuration."""


@dataclass
class EncodedImage:
    data: bytes
    height: int
    width: int
    estimated_bits: Optional[float] = None
    state: Optional[dict] = field(default=None, repr=False)

    @property
    def bpp(self) -> float:
        return 8.0 * len(self.data) / (self.height * self.width)

    @property
    def estimated_bpp(self) -> Optional[float]:
        if self.estimated_bits is None:
            return None
        return self.estimated_bits / (self.height * self.width)


def to_tensor(image) -> torch.Tensor:
    """``(H, W, 3)`` uint8 array or ``(3, H, W)`` float tensor in [0, 1] to a float tensor."""
    if isinstance(image, torch.Tensor):
        x = image.detach().float()
    else:
        arr = np.asarray(image)
        if arr.ndim != 3 or arr.shape[-1] != 3:
            raise ValueError(f"expected an (H, W, 3) image array, got shape {arr.shape}")
        scale = 255.0 if arr.dtype == np.uint8 else 1.0
        x = torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))).float() / scale
    if x.dim() != 3 or x.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) image, got {tuple(x.shape)}")
    return x


def to_uint8(x: torch.Tensor) -> np.ndarray:
    """``(3, H, W)`` float tensor in [0, 1] to an ``(H, W, 3)`` uint8 array."""
    arr = x.detach().clamp(0, 1).mul(255.0).add(0.5).floor().to(torch.uint8)
    return arr.permute(1, 2, 0).cpu().numpy()


def _padded(n):
    return -(-n // ALIGN) * ALIGN


def pad_image(x: torch.Tensor) -> torch.Tensor:
    """Replicate-pad a ``(3, H, W)`` image to multiples of 64; returns ``(1, 3, H', W')``."""
    H, W = x.shape[-2:]
    return F.pad(x[None], (0, _padded(W) - W, 0, _padded(H) - H), mode="replicate")


def _z_tables(model, shape):
    c, h, w = shape
    loc = model.z_prior.loc.detach().double().numpy()
    scale = model.z_prior.scale.detach().double().numpy()
    return build_cdf(np.repeat(loc, h * w), np.repeat(scale, h * w), family="logistic")


def _group_tables(mu, sigma, centered):
    """Tables plus the additive offset that maps symbols back to latent values."""
    mu_np = mu.detach().double().numpy().ravel()
    sigma_np = sigma.detach().double().numpy().ravel()
    if centered:
        offset = snap(mu_np)
        return build_cdf(np.zeros_like(mu_np), sigma_np), offset
    return build_cdf(mu_np, sigma_np), None


def _symbols_to_latent(symbols, offset, like):
    values = symbols.astype(np.float64)
    if offset is not None:
        values = values + offset
    return torch.from_numpy(values).to(like.dtype).reshape(like.shape).contiguous()


@torch.no_grad()
def encode_image(image, model: CMamba, keep_state: bool = False) -> EncodedImage:
    """Compress one image to a container byte string.

    The image is replicate-padded to a multiple of 64 on each side; the
    original size is stored in the header and restored by :func:`decode_image`.
    """
    x = to_tensor(image)
    H, W = x.shape[-2:]
    if H < MIN_SIZE or W < MIN_SIZE:
        raise ValueError(f"image {H}x{W} is smaller than {MIN_SIZE}x{MIN_SIZE}")
    cfg = model.config
    centered = cfg.quant_mode == "centered"

    y = model.g_a(pad_image(x))
    z = model.h_a(y)
    z_sym = torch.clamp(round_half_away(z), *WINDOW).contiguous()
    z_tables = _z_tables(model, z.shape[1:])
    z_np = z_sym.numpy().astype(np.int64).ravel()
    z_bytes = range_encode(z_np, z_tables)
    bits = float(-torch.log2(model.z_prior.likelihood(z_sym)).sum())

    phi = model.h_s(z_sym)
    y_bars, y_hats, segments = [], [], []
    for i, y_i in enumerate(split_groups(y, cfg.groups)):
        prev = merge_groups(y_bars) if y_bars else None
        mu, sigma = model.predictors[i](phi, prev)
        tables, offset = _group_tables(mu, sigma, centered)
        target = y_i.double().numpy().ravel()
        if offset is not None:
            target = target - offset
        symbols = np.clip(np.sign(target) * np.floor(np.abs(target) + 0.5), *WINDOW).astype(np.int64)
        segments.append(range_encode(symbols, tables))
        y_hat = _symbols_to_latent(symbols, offset, y_i)
        bits += float(-torch.log2(gaussian_likelihood(y_hat, mu, sigma)).sum())
        y_bars.append(y_hat + model.lrps[i](phi, prev, y_hat))
        y_hats.append(y_hat)

    header = bitstream.Header(width=W, height=H, config_id=cfg.config_id,
                              lambda_index=lambda_index(cfg.lmbda, cfg.metric), groups=cfg.groups)
    data = bitstream.serialize(header, z_bytes, segments)
    state = None
    if keep_state:
        state = {"z_hat": z_sym, "y": y, "y_hat": merge_groups(y_hats), "y_bar": merge_groups(y_bars)}
    return EncodedImage(data, H, W, bits, state)


@torch.no_grad()
def decode_image(encoded, model: CMamba, keep_state: bool = False):
    """Reconstruct a ``(3, H, W)`` image tensor from a container.

    With ``keep_state`` a ``(image, state)`` pair is returned, ``state`` holding
    the decoded ``z_hat``, ``y_hat`` and ``y_bar``.
    """
    data = encoded.data if isinstance(encoded, EncodedImage) else encoded
    header, z_bytes, segments = bitstream.deserialize(data)
    cfg = model.config
    if header.config_id != cfg.config_id or header.groups != cfg.groups:
        raise ModelMismatchError("bitstream was produced by a differently configured model")
    if header.width < MIN_SIZE or header.height < MIN_SIZE:
        raise bitstream.BitstreamError(f"invalid image size {header.width}x{header.height}")
    centered = cfg.quant_mode == "centered"
    Hp, Wp = _padded(header.height), _padded(header.width)

    z_shape = (1, cfg.hyper_channels, Hp // 64, Wp // 64)
    z_sym = range_decode(z_bytes, _z_tables(model, z_shape[1:]))
    z_hat = torch.from_numpy(z_sym.astype(np.float32)).reshape(z_shape).contiguous()
    phi = model.h_s(z_hat)

    like = torch.empty(1, cfg.group_channels, Hp // 16, Wp // 16)
    y_bars, y_hats = [], []
    for i, seg in enumerate(segments):
        prev = merge_groups(y_bars) if y_bars else None
        mu, sigma = model.predictors[i](phi, prev)
        tables, offset = _group_tables(mu, sigma, centered)
        y_hat = _symbols_to_latent(range_decode(seg, tables), offset, like)
        y_bars.append(y_hat + model.lrps[i](phi, prev, y_hat))
        y_hats.append(y_hat)

    y_bar = merge_groups(y_bars)
    x_hat = model.g_s(y_bar)[0, :, :header.height, :header.width]
    if keep_state:
        return x_hat, {"z_hat": z_hat, "y_hat": merge_groups(y_hats), "y_bar": y_bar}
    return x_hat

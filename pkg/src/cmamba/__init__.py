"""Learned image compression with content-adaptive state space transforms."""
from .checkpoint import load_checkpoint, save_checkpoint
from .config import MSE_LAMBDAS, MSSSIM_LAMBDAS, ModelConfig
from .metrics import RDCurve, bd_rate, ms_ssim, psnr
from .model import CMamba
from .pipeline import EncodedImage, decode_image, encode_image
from .training import TrainConfig, rd_loss, train

__all__ = [
    "CMamba",
    "ModelConfig",
    "TrainConfig",
    "MSE_LAMBDAS",
    "MSSSIM_LAMBDAS",
    "EncodedImage",
    "encode_image",
    "decode_image",
    "train",
    "rd_loss",
    "save_checkpoint",
    "load_checkpoint",
    "psnr",
    "ms_ssim",
    "bd_rate",
    "RDCurve",
]
__version__ = "0.1.0"

"""The full compression model: transforms, hyper-prior and context-aware entropy model."""
import torch
import torch.nn as nn

from .config import ModelConfig
from .entropy import (FactorizedPrior, GroupParamPredictor, gaussian_likelihood,
                      merge_groups, round_half_away, split_groups)
from .transforms import (AnalysisTransform, HyperDecoder, HyperEncoder,
                         LatentResidualPredictor, SynthesisTransform)

__all__ = ["CMamba", "QUANTIZERS"]

# "ste": uniform noise on the rate path, straight-through rounding elsewhere.
# "noise": uniform noise everywhere (smooth, used for finite-difference checks).
# "round": hard rounding everywhere (evaluation).
QUANTIZERS = ("ste", "noise", "round")


def _ste_round(x):
    return x + (round_half_away(x) - x).detach()


def _uniform_noise(x, generator):
    return torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device) - 0.5


class CMamba(nn.Module):
    def __init__(self, config: ModelConfig = None):
        super().__init__()
        self.config = config = config or ModelConfig()
        self.g_a = AnalysisTransform(config)
        self.g_s = SynthesisTransform(config)
        self.h_a = HyperEncoder(config)
        self.h_s = HyperDecoder(config)
        self.z_prior = FactorizedPrior(config.hyper_channels)
        self.predictors = nn.ModuleList(
            GroupParamPredictor(config, i) for i in range(1, config.groups + 1))
        self.lrps = nn.ModuleList(
            LatentResidualPredictor(config, i) for i in range(1, config.groups + 1))

    def _quantize(self, v, mu, mode, generator):
        """Return ``(rate_input, decode_value)`` for one latent tensor."""
        if mode == "round":
            q = round_half_away(v - mu) + mu if mu is not None else round_half_away(v)
            return q, q
        noisy = v + _uniform_noise(v, generator)
        if mode == "noise":
            return noisy, noisy
        if mu is not None:
            return noisy, _ste_round(v - mu) + mu
        return noisy, _ste_round(v)

    def forward(self, x, quantizer: str = "ste", generator=None):
        """Differentiable pass used for training.

        Returns a dict with the reconstruction ``x_hat`` (unclamped), the latent
        ``y``, the rectified latent ``y_bar`` and per-element likelihoods of
        ``y`` and ``z``.
        """
        if quantizer not in QUANTIZERS:
            raise ValueError(f"quantizer must be one of {QUANTIZERS}")
        centered = self.config.quant_mode == "centered"
        y = self.g_a(x)
        z = self.h_a(y)
        z_rate, z_hat = self._quantize(z, None, quantizer, generator)
        z_lik = self.z_prior.likelihood(z_rate)
        phi = self.h_s(z_hat)

        y_bars, y_liks, mus, sigmas = [], [], [], []
        for i, y_i in enumerate(split_groups(y, self.config.groups)):
            prev = merge_groups(y_bars) if y_bars else None
            mu, sigma = self.predictors[i](phi, prev)
            y_rate, y_hat = self._quantize(y_i, mu if centered else None, quantizer, generator)
            y_liks.append(gaussian_likelihood(y_rate, mu, sigma))
            y_bars.append(y_hat + self.lrps[i](phi, prev, y_hat))
            mus.append(mu)
            sigmas.append(sigma)

        y_bar = merge_groups(y_bars)
        return {
            "x_hat": self.g_s(y_bar, clamp=False),
            "y": y,
            "y_bar": y_bar,
            "mu": merge_groups(mus),
            "sigma": merge_groups(sigmas),
            "likelihoods": {"y": merge_groups(y_liks), "z": z_lik},
        }

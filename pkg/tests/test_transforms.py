import pytest
import torch

from cmamba.config import ModelConfig
from cmamba.transforms import (AnalysisTransform, HyperDecoder, HyperEncoder,
                               LatentResidualPredictor, SynthesisTransform)

from conftest import fd_rel_error

# C <= 8 everywhere, small enough for float64 finite differences
FD_CONFIG = ModelConfig(widths=(4, 4, 8, 8), latent_channels=8, hyper_channels=4,
                        blocks=1, groups=2, d_state=2)


@pytest.fixture(scope="module")
def cfg():
    return ModelConfig.tiny()


def test_analysis_shape_default_config():
    torch.manual_seed(0)
    g_a = AnalysisTransform(ModelConfig())
    with torch.no_grad():
        y = g_a(torch.rand(1, 3, 256, 256))
    assert y.shape == (1, 96, 16, 16)


def test_synthesis_and_hyper_shapes_default_config():
    cfg = ModelConfig()
    torch.manual_seed(0)
    with torch.no_grad():
        x_hat = SynthesisTransform(cfg)(torch.randn(1, 96, 16, 16))
        z = HyperEncoder(cfg)(torch.randn(1, 96, 16, 16))
        phi = HyperDecoder(cfg)(torch.randn(1, 64, 4, 4))
    assert x_hat.shape == (1, 3, 256, 256)
    assert z.shape == (1, 64, 4, 4)
    assert phi.shape == (1, 192, 16, 16)


def test_analysis_is_deterministic(cfg):
    torch.manual_seed(1)
    g_a = AnalysisTransform(cfg)
    x = torch.rand(2, 3, 64, 128)
    assert torch.equal(g_a(x), g_a(x))


def test_analysis_sees_single_pixel_change(cfg):
    torch.manual_seed(2)
    g_a = AnalysisTransform(cfg)
    x = torch.rand(1, 3, 64, 64) * 0.5
    x2 = x.clone()
    x2[0, 1, 30, 17] += 0.5
    with torch.no_grad():
        assert not torch.equal(g_a(x), g_a(x2))


@pytest.mark.parametrize("shape", [(1, 3, 64, 96), (1, 3, 100, 64), (1, 1, 64, 64), (3, 64, 64)])
def test_analysis_rejects_bad_shapes(cfg, shape):
    with pytest.raises(ValueError):
        AnalysisTransform(cfg)(torch.rand(*shape))


def test_synthesis_output_is_clamped(cfg):
    torch.manual_seed(3)
    g_s = SynthesisTransform(cfg)
    out = g_s(50 * torch.randn(2, cfg.latent_channels, 4, 4))
    assert out.min() >= 0 and out.max() <= 1
    raw = g_s(50 * torch.randn(2, cfg.latent_channels, 4, 4), clamp=False)
    assert raw.min() < 0 or raw.max() > 1


def test_synthesis_rejects_wrong_channels(cfg):
    with pytest.raises(ValueError):
        SynthesisTransform(cfg)(torch.randn(1, cfg.latent_channels + 1, 4, 4))


def test_hyper_shapes_and_determinism(cfg):
    torch.manual_seed(4)
    h_a, h_s = HyperEncoder(cfg), HyperDecoder(cfg)
    y = torch.randn(1, cfg.latent_channels, 8, 12)
    z = h_a(y)
    assert z.shape == (1, cfg.hyper_channels, 2, 3)
    phi = h_s(torch.round(z))
    assert phi.shape == (1, 2 * cfg.latent_channels, 8, 12)
    assert torch.equal(h_s(torch.round(z)), phi)
    with pytest.raises(ValueError):
        h_a(torch.randn(1, cfg.latent_channels, 6, 8))
    with pytest.raises(ValueError):
        h_s(torch.randn(1, cfg.hyper_channels + 1, 2, 2))


class TestLatentResidualPredictor:
    def _inputs(self, cfg, index, h=4, w=5, scale=1.0):
        Mg = cfg.group_channels
        phi = scale * torch.randn(1, 2 * cfg.latent_channels, h, w)
        prev = None if index == 1 else scale * torch.randn(1, (index - 1) * Mg, h, w)
        return phi, prev, torch.round(scale * torch.randn(1, Mg, h, w))

    def test_zero_initialized_output(self, cfg):
        torch.manual_seed(5)
        for i in range(1, cfg.groups + 1):
            r = LatentResidualPredictor(cfg, i)(*self._inputs(cfg, i))
            assert torch.equal(r, torch.zeros_like(r))

    @pytest.mark.parametrize("index", [1, 2, 4])
    def test_half_bin_bound(self, cfg, index):
        torch.manual_seed(index)
        lrp = LatentResidualPredictor(cfg, index)
        torch.nn.init.normal_(lrp.output_layer.weight, std=5.0)
        r = lrp(*self._inputs(cfg, index, scale=20.0))
        assert r.shape == (1, cfg.group_channels, 4, 5)
        assert r.abs().max() <= 0.5
        assert r.abs().max() > 0.1

    def test_rejects_misaligned_inputs(self, cfg):
        lrp = LatentResidualPredictor(cfg, 2)
        phi, prev, y_hat = self._inputs(cfg, 2)
        with pytest.raises(ValueError):
            lrp(phi, prev[..., :3], y_hat)
        with pytest.raises(ValueError):
            lrp(phi, torch.cat([prev, prev], dim=1), y_hat)

    def test_rejects_bad_index(self, cfg):
        with pytest.raises(ValueError):
            LatentResidualPredictor(cfg, 0)
        with pytest.raises(ValueError):
            LatentResidualPredictor(cfg, cfg.groups + 1)


@pytest.mark.parametrize("name", ["g_a", "g_s", "h_a", "h_s"])
def test_gradients_match_finite_differences(name):
    torch.manual_seed(6)
    cfg = FD_CONFIG
    module, shape = {
        "g_a": (AnalysisTransform(cfg), (1, 3, 64, 64)),
        "g_s": (SynthesisTransform(cfg), (1, 8, 2, 2)),
        "h_a": (HyperEncoder(cfg), (1, 8, 4, 4)),
        "h_s": (HyperDecoder(cfg), (1, 4, 2, 2)),
    }[name]
    module = module.double()
    x = torch.rand(shape, dtype=torch.float64, requires_grad=True)
    call = (lambda: module(x, clamp=False)) if name == "g_s" else (lambda: module(x))
    target = torch.randn_like(call().detach())
    err = fd_rel_error(lambda: ((call() - target) ** 2).sum(), [x, *module.parameters()])
    assert err < 1e-3

import math

import mpmath
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from cmamba.config import ModelConfig
from cmamba.entropy import (P_MIN, SIGMA_MIN, FactorizedPrior, GroupParamPredictor,
                            estimate_rate, gaussian_likelihood, logistic_likelihood,
                            merge_groups, round_half_away, split_groups)
from cmamba.model import CMamba

from conftest import fd_rel_error


def _mp_gauss_bin(k, mu, sigma):
    cdf = lambda t: mpmath.ncdf(t, mu=mu, sigma=sigma)
    return float(cdf(k + 0.5) - cdf(k - 0.5))


class TestGroups:
    def test_default_split(self):
        groups = split_groups(torch.randn(2, 96, 3, 3), 4)
        assert [g.shape[1] for g in groups] == [24] * 4

    def test_single_group_is_identity(self):
        y = torch.randn(1, 8, 2, 2)
        (g,) = split_groups(y, 1)
        assert torch.equal(g, y)

    @given(groups=st.sampled_from([1, 2, 3, 4, 6]), seed=st.integers(0, 1000))
    def test_merge_inverts_split(self, groups, seed):
        y = torch.randn(2, 12, 3, 5, generator=torch.Generator().manual_seed(seed))
        parts = split_groups(y, groups)
        assert torch.equal(merge_groups(parts), y)
        offsets = [0]
        for p in parts:
            offsets.append(offsets[-1] + p.shape[1])
        assert offsets[-1] == 12 and len(set(p.shape[1] for p in parts)) == 1

    def test_rejects_uneven_split(self):
        with pytest.raises(ValueError):
            split_groups(torch.randn(1, 10, 2, 2), 4)


def test_round_half_away_from_zero():
    x = torch.tensor([-2.5, -1.5, -0.5, -0.49, 0.0, 0.49, 0.5, 1.5, 2.5])
    assert round_half_away(x).tolist() == [-3, -2, -1, 0, 0, 0, 1, 2, 3]


class TestGaussianLikelihood:
    def test_unit_scale_at_mean(self):
        p = gaussian_likelihood(torch.tensor(0.0), torch.tensor(0.0), torch.tensor(1.0))
        assert abs(float(p) - 0.3829) < 1e-4
        assert abs(float(p) - math.erf(0.5 / math.sqrt(2))) < 1e-7

    def test_wide_scale_matches_density(self):
        p = gaussian_likelihood(torch.tensor(3.0, dtype=torch.float64), 3.0, torch.tensor(100.0, dtype=torch.float64))
        assert abs(float(p) - 1 / (100 * math.sqrt(2 * math.pi))) < 1e-5
        assert abs(float(p) - 0.003989) < 1e-5

    @settings(max_examples=60, deadline=None)
    @given(mu=st.floats(-20, 20), sigma=st.floats(0.05, 30), k=st.integers(-40, 40))
    def test_matches_high_precision_oracle(self, mu, sigma, k):
        p = gaussian_likelihood(torch.tensor(float(k), dtype=torch.float64),
                                torch.tensor(mu, dtype=torch.float64),
                                torch.tensor(sigma, dtype=torch.float64), floor=False)
        want = _mp_gauss_bin(k, mu, sigma)
        assert abs(float(p) - want) <= 1e-12 + 1e-9 * want

    @given(k=st.integers(0, 30), sigma=st.floats(0.01, 50))
    def test_symmetric_about_mean(self, k, sigma):
        mu = torch.tensor(1.25, dtype=torch.float64)
        s = torch.tensor(sigma, dtype=torch.float64)
        assert float(gaussian_likelihood(mu + k, mu, s)) == float(gaussian_likelihood(mu - k, mu, s))

    def test_floor_and_range(self):
        p = gaussian_likelihood(torch.tensor([0.0, 50.0]), torch.zeros(2), torch.full((2,), 0.1))
        assert float(p[1]) == P_MIN
        assert torch.all((p > 0) & (p <= 1))

    def test_sigma_clamped_to_minimum(self):
        a = gaussian_likelihood(torch.tensor(0.3), 0.0, torch.tensor(1e-6))
        b = gaussian_likelihood(torch.tensor(0.3), 0.0, torch.tensor(SIGMA_MIN))
        assert torch.equal(a, b)

    @pytest.mark.parametrize("sigma", [0.3, 1.0, 7.0])
    def test_mass_sums_to_one(self, sigma):
        k = torch.arange(-200, 201, dtype=torch.float64)
        total = gaussian_likelihood(k, 0.37, torch.tensor(sigma, dtype=torch.float64), floor=False).sum()
        assert abs(float(total) - 1.0) < 1e-9

    def test_mean_bin_is_most_likely(self):
        k = torch.arange(-10, 11, dtype=torch.float64)
        p = gaussian_likelihood(k, 0.0, torch.tensor(2.0, dtype=torch.float64))
        assert int(torch.argmax(p)) == 10


class TestLogisticLikelihood:
    def test_unit_scale_at_location(self):
        p = logistic_likelihood(torch.tensor(0.0), torch.tensor(0.0), torch.tensor(1.0))
        assert abs(float(p) - 0.2449) < 1e-4
        assert abs(float(p) - (2 / (1 + math.exp(-0.5)) - 1)) < 1e-7

    @pytest.mark.parametrize("loc,scale", [(0.0, 1.0), (0.3, 0.5), (-2.0, 3.0)])
    def test_normalization_sweep(self, loc, scale):
        k = torch.arange(math.ceil(loc - 40 * scale), math.floor(loc + 40 * scale) + 1, dtype=torch.float64)
        total = logistic_likelihood(k, loc, torch.tensor(scale, dtype=torch.float64), floor=False).sum()
        assert abs(float(total) - 1.0) < 1e-6

    def test_factorized_prior_in_unit_interval(self):
        prior = FactorizedPrior(3)
        with torch.no_grad():
            prior.log_scale.copy_(torch.tensor([-3.0, 0.0, 3.0]))
        z = torch.arange(-60, 61, dtype=torch.float32).view(1, 1, 1, -1).expand(1, 3, 1, -1)
        p = prior.likelihood(z)
        assert torch.all(p > 0) and torch.all(p <= 1)
        assert torch.all(prior.scale > 0)


class TestEstimateRate:
    def test_half_probabilities(self):
        assert float(estimate_rate(torch.full((100,), 0.5))) == 100.0

    def test_certain_symbols_are_free(self):
        assert float(estimate_rate(torch.ones(7))) == 0.0

    @pytest.mark.parametrize("bad", [0.0, -0.1, 1.5])
    def test_rejects_invalid(self, bad):
        with pytest.raises(ValueError):
            estimate_rate(torch.tensor([0.5, bad]))


class TestGroupParamPredictor:
    @pytest.fixture
    def cfg(self):
        return ModelConfig.tiny()

    def test_sigma_floor_and_shapes(self, cfg):
        torch.manual_seed(0)
        pred = GroupParamPredictor(cfg, 3)
        phi = torch.randn(2, 2 * cfg.latent_channels, 4, 6)
        prev = torch.randn(2, 2 * cfg.group_channels, 4, 6)
        mu, sigma = pred(phi, prev)
        assert mu.shape == sigma.shape == (2, cfg.group_channels, 4, 6)
        assert torch.all(sigma >= SIGMA_MIN)
        with torch.no_grad():
            pred.ffn[-1].bias.fill_(-1e4)
        assert torch.all(pred(phi, prev).sigma >= SIGMA_MIN)

    def test_zero_ffn_passes_scan_features_through(self, cfg):
        torch.manual_seed(1)
        pred = GroupParamPredictor(cfg, 2)
        torch.nn.init.zeros_(pred.ffn[-1].weight)
        torch.nn.init.zeros_(pred.ffn[-1].bias)
        phi = torch.randn(1, 2 * cfg.latent_channels, 3, 3)
        prev = torch.randn(1, cfg.group_channels, 3, 3)
        f_sq = pred.squeeze(torch.cat([phi, prev], dim=1))
        f_ssm = pred.ss2d(f_sq) + f_sq
        mu, sigma = pred(phi, prev)
        assert torch.allclose(mu, f_ssm[:, :cfg.group_channels])
        assert torch.allclose(sigma, torch.nn.functional.softplus(f_ssm[:, cfg.group_channels:]) + SIGMA_MIN)

    def test_first_group_ignores_latent_content(self, cfg):
        torch.manual_seed(2)
        pred = GroupParamPredictor(cfg, 1)
        phi = torch.randn(1, 2 * cfg.latent_channels, 3, 3)
        base = pred(phi)
        other = pred(phi, torch.randn(1, cfg.group_channels, 3, 3))
        assert torch.equal(base.mu, other.mu) and torch.equal(base.sigma, other.sigma)

    def test_rejects_bad_context(self, cfg):
        pred = GroupParamPredictor(cfg, 3)
        phi = torch.randn(1, 2 * cfg.latent_channels, 3, 3)
        with pytest.raises(ValueError):
            pred(phi, torch.randn(1, cfg.group_channels, 3, 3))
        with pytest.raises(ValueError):
            pred(phi, torch.randn(1, 2 * cfg.group_channels, 3, 4))
        with pytest.raises(ValueError):
            GroupParamPredictor(cfg, 0)

    def test_causality_across_groups(self, cfg):
        """Group i's parameters depend only on decoded groups before i."""
        torch.manual_seed(3)
        model = CMamba(cfg).eval()
        for lrp in model.lrps:
            torch.nn.init.normal_(lrp.output_layer.weight, std=0.3)
        phi = torch.randn(1, 2 * cfg.latent_channels, 4, 4)

        def params(y):
            out, bars = [], []
            for i, y_i in enumerate(split_groups(y, cfg.groups)):
                prev = merge_groups(bars) if bars else None
                out.append(model.predictors[i](phi, prev))
                y_hat = round_half_away(y_i)
                bars.append(y_hat + model.lrps[i](phi, prev, y_hat))
            return out

        with torch.no_grad():
            y = 3 * torch.randn(1, cfg.latent_channels, 4, 4)
            ref = params(y)
            Mg = cfg.group_channels
            for i in range(cfg.groups):
                y2 = y.clone()
                y2[:, i * Mg:] += 5 * torch.randn_like(y2[:, i * Mg:])
                got = params(y2)
                for j in range(i + 1):
                    assert torch.equal(got[j].mu, ref[j].mu)
                    assert torch.equal(got[j].sigma, ref[j].sigma)
                if i + 1 < cfg.groups:
                    assert not torch.equal(got[i + 1].mu, ref[i + 1].mu)

    def test_non_autoregressive_flag_uses_hyperprior_only(self):
        cfg = ModelConfig.tiny(autoregressive=False)
        torch.manual_seed(4)
        pred = GroupParamPredictor(cfg, 3)
        phi = torch.randn(1, 2 * cfg.latent_channels, 3, 3)
        a = pred(phi, torch.randn(1, 2 * cfg.group_channels, 3, 3))
        assert torch.equal(a.mu, pred(phi).mu)

    def test_gradient_matches_finite_differences(self):
        cfg = ModelConfig(widths=(4, 4, 8, 8), latent_channels=8, hyper_channels=4, groups=2, d_state=2)
        torch.manual_seed(5)
        pred = GroupParamPredictor(cfg, 2).double()
        phi = torch.randn(1, 16, 4, 4, dtype=torch.float64, requires_grad=True)
        prev = torch.randn(1, 4, 4, 4, dtype=torch.float64, requires_grad=True)
        target = torch.randn(1, 4, 4, 4, dtype=torch.float64)

        def loss():
            mu, sigma = pred(phi, prev)
            return ((mu - target) ** 2).sum() + torch.log(sigma).sum()

        assert fd_rel_error(loss, [phi, prev, *pred.parameters()]) < 1e-3

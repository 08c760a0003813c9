"""Detector network shape contracts, FiLM integration, and gradients."""

import numpy as np
import pytest
import torch

from soundtriage import backbone as backbone_mod
from soundtriage.backbone import BackboneConfig, DetectorBackbone, PosteriorGrid, forward_clip
from soundtriage.conditioning import FilmParams, identity_film
from soundtriage.dataio import FeatureGrid

import oracles


def small_model(n_mels=16, n_classes=3, seed=0, double=False):
    torch.manual_seed(seed)
    model = DetectorBackbone(BackboneConfig(n_mels=n_mels, n_classes=n_classes))
    model.eval()
    return model.double() if double else model


class TestShapes:
    def test_paper_scale_output_steps(self):
        model = small_model(n_mels=64, n_classes=10)
        x = torch.randn(1, 1, 499, 64, generator=torch.Generator().manual_seed(1))
        with torch.no_grad():
            logits = model(x, identity_film(64))
        assert logits.shape == (1, 10, 16)

    @pytest.mark.parametrize("t_frames,expected", [(32, 1), (33, 2), (64, 2),
                                                   (65, 3), (150, 5), (499, 16)])
    def test_output_length_any_input(self, t_frames, expected):
        model = small_model()
        x = torch.randn(1, 1, t_frames, 16)
        with torch.no_grad():
            logits = model(x, identity_film(64))
        assert logits.shape[-1] == expected
        assert model.config.n_output_frames(t_frames) == expected

    def test_rejects_wrong_mel_width(self):
        model = small_model()
        with pytest.raises(ValueError):
            model(torch.randn(1, 1, 64, 24), identity_film(64))

    def test_forward_clip_posterior(self):
        model = small_model()
        grid = FeatureGrid(values=np.random.default_rng(0).normal(size=(100, 16)),
                           frame_hop=0.02)
        posterior = forward_clip(model, grid, identity_film(64))
        assert posterior.logits.shape == (3, 4)
        assert posterior.frame_hop_out == pytest.approx(0.64)
        probs = posterior.probabilities
        assert ((probs > 0) & (probs < 1)).all()


class TestFilmIntegration:
    def test_identity_film_is_a_noop(self, monkeypatch):
        model = small_model(seed=3)
        x = torch.randn(2, 1, 96, 16, generator=torch.Generator().manual_seed(2))
        with torch.no_grad():
            with_film = model(x, identity_film(64))
        monkeypatch.setattr(backbone_mod, "apply_film", lambda fm, film: fm)
        with torch.no_grad():
            without_film = model(x, identity_film(64))
        assert torch.equal(with_film, without_film)

    def test_film_changes_output(self):
        model = small_model(seed=4)
        x = torch.randn(1, 1, 64, 16, generator=torch.Generator().manual_seed(5))
        gen = torch.Generator().manual_seed(6)
        film = FilmParams(mu=torch.randn(64, generator=gen),
                          sigma=1.0 + 0.5 * torch.randn(64, generator=gen))
        with torch.no_grad():
            a = model(x, identity_film(64))
            b = model(x, film)
        assert not torch.allclose(a, b)

    def test_no_cross_clip_coupling_single_clip_eval(self):
        model = small_model(seed=7)
        rng = np.random.default_rng(8)
        grid_a = FeatureGrid(values=rng.normal(size=(80, 16)), frame_hop=0.02)
        grid_b = FeatureGrid(values=rng.normal(size=(80, 16)), frame_hop=0.02)
        first = forward_clip(model, grid_a, identity_film(64)).logits
        forward_clip(model, grid_b, identity_film(64))
        second = forward_clip(model, grid_a, identity_film(64)).logits
        assert np.array_equal(first, second)


class TestGradients:
    def test_backprop_matches_finite_differences_on_subset(self):
        model = small_model(n_mels=8, seed=9, double=True)
        model.train()
        gen = torch.Generator().manual_seed(10)
        x = torch.randn(1, 1, 40, 8, generator=gen, dtype=torch.float64)
        target = (torch.rand(1, 3, 2, generator=gen) < 0.4).double()
        film = identity_film(64, dtype=torch.float64)

        def loss_value():
            logits = model(x, film)
            return torch.nn.functional.binary_cross_entropy_with_logits(
                logits, target, reduction="sum")

        model.zero_grad()
        loss_value().backward()

        params = list(model.parameters())
        rng = np.random.default_rng(11)
        step = 1e-3
        checked = 0
        while checked < 10:
            p = params[int(rng.integers(len(params)))]
            i = int(rng.integers(p.numel()))
            analytic = p.grad.view(-1)[i].item()
            with torch.no_grad():
                old = p.view(-1)[i].item()
                p.view(-1)[i] = old + step
                hi = float(loss_value())
                p.view(-1)[i] = old - step
                lo = float(loss_value())
                p.view(-1)[i] = old
            fd = (hi - lo) / (2 * step)
            if abs(fd) < 1e-7 and abs(analytic) < 1e-7:
                checked += 1
                continue
            assert oracles.relative_error([analytic], [fd], floor=1e-8) < 1e-3
            checked += 1

    def test_differentiable_through_film(self):
        model = small_model(n_mels=8, seed=12, double=True)
        x = torch.randn(1, 1, 40, 8, dtype=torch.float64)
        mu = torch.zeros(64, dtype=torch.float64, requires_grad=True)
        sigma = torch.ones(64, dtype=torch.float64, requires_grad=True)
        logits = model(x, FilmParams(mu=mu, sigma=sigma))
        logits.sum().backward()
        assert mu.grad is not None and torch.isfinite(mu.grad).all()
        assert sigma.grad is not None and torch.isfinite(sigma.grad).all()
        assert float(mu.grad.abs().sum()) > 0


class TestPosteriorGrid:
    def test_probabilities_strictly_inside_unit_interval(self):
        rng = np.random.default_rng(13)
        logits = rng.uniform(-36, 36, size=(4, 50))
        grid = PosteriorGrid(logits=logits, frame_hop_out=0.64)
        probs = grid.probabilities
        assert (probs > 0).all() and (probs < 1).all()
        assert np.allclose(probs, 1 / (1 + np.exp(-logits)))

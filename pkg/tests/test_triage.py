"""Priority vector construction and Dirichlet sampling."""

import numpy as np
import pytest

from soundtriage.triage import (DirichletConfig, TriageWeights, make_inference_weights,
                                parse_lambda, sample_triage, scale_for_conditioning)

import oracles


class TestTriageWeights:
    def test_normalization(self):
        w = TriageWeights(raw=np.array([2.0, 6.0]))
        assert np.allclose(w.normalized, [0.25, 0.75])
        assert np.array_equal(w.raw, [2.0, 6.0])

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            TriageWeights(raw=np.array([1.0, -0.1]))

    def test_rejects_all_zero(self):
        with pytest.raises(ValueError):
            TriageWeights(raw=np.zeros(3))

    def test_uniform(self):
        w = TriageWeights.uniform(4)
        assert np.allclose(w.normalized, 0.25)


class TestSampleTriage:
    def test_simplex_constraint(self):
        config = DirichletConfig.symmetric(10, 0.1)
        rng = np.random.default_rng(0)
        for _ in range(2000):
            w = sample_triage(config, rng)
            assert abs(w.normalized.sum() - 1.0) <= 1e-9
            assert (w.normalized >= 0).all()
            # sampling yields the simplex directly: raw is already normalized
            assert np.allclose(w.raw, w.normalized, rtol=0, atol=1e-12)

    def test_deterministic_under_fixed_state(self):
        config = DirichletConfig.symmetric(5, 0.3)
        a = sample_triage(config, np.random.default_rng(42))
        b = sample_triage(config, np.random.default_rng(42))
        assert np.array_equal(a.raw, b.raw)

    def test_symmetric_means(self):
        config = DirichletConfig.symmetric(10, 0.1)
        rng = np.random.default_rng(7)
        total = np.zeros(10)
        n = 20000
        for _ in range(n):
            total += sample_triage(config, rng).normalized
        assert np.max(np.abs(total / n - 0.1)) < 0.01

    def test_tail_matches_quantile_oracle(self):
        config = DirichletConfig.symmetric(10, 0.1)
        rng = np.random.default_rng(3)
        n = 20000
        hits = sum(sample_triage(config, rng).normalized.max() > 0.5
                   for _ in range(n))
        oracle_draws = oracles.dirichlet_quantile_sample([0.1] * 10, n, seed=99)
        oracle_rate = float((oracle_draws.max(axis=1) > 0.5).mean())
        assert abs(hits / n - oracle_rate) < 0.02

    def test_exchangeable_across_coordinates(self):
        config = DirichletConfig.symmetric(6, 0.5)
        rng = np.random.default_rng(12)
        draws = np.stack([sample_triage(config, rng).normalized
                          for _ in range(20000)])
        means = draws.mean(axis=0)
        second = (draws ** 2).mean(axis=0)
        assert means.max() - means.min() < 0.01
        assert second.max() - second.min() < 0.01

    def test_rejects_nonpositive_alpha(self):
        with pytest.raises(ValueError):
            DirichletConfig(alpha=np.array([0.1, 0.0]))
        with pytest.raises(ValueError):
            DirichletConfig(alpha=np.array([-1.0, 1.0]))


class TestMakeInferenceWeights:
    def test_paper_style_single_target(self):
        w = make_inference_weights(0, 5.0, 10)
        expected = np.array([5.0] + [1.0] * 9) / 14.0
        assert np.allclose(w.normalized, expected, atol=1e-15)

    def test_weight_one_is_uniform(self):
        w = make_inference_weights(4, 1.0, 10)
        assert np.allclose(w.normalized, 0.1)

    def test_argmax_and_value(self):
        w = make_inference_weights(3, 20.0, 10)
        assert int(np.argmax(w.normalized)) == 3
        assert w.normalized[3] == pytest.approx(20.0 / 29.0, abs=1e-15)

    def test_argmax_correct_whenever_above_one(self):
        for target in range(5):
            for weight in (1.01, 2.0, 7.5):
                w = make_inference_weights(target, weight, 5)
                assert int(np.argmax(w.normalized)) == target

    def test_errors(self):
        with pytest.raises(ValueError):
            make_inference_weights(10, 5.0, 10)
        with pytest.raises(ValueError):
            make_inference_weights(-1, 5.0, 10)
        with pytest.raises(ValueError):
            make_inference_weights(0, 0.0, 10)


class TestScaleForConditioning:
    def test_uniform_maps_to_ones(self):
        assert np.allclose(scale_for_conditioning(TriageWeights.uniform(10)), 1.0)

    def test_single_target_scaling(self):
        w = make_inference_weights(0, 5.0, 10)
        scaled = scale_for_conditioning(w)
        expected = np.array([50.0] + [10.0] * 9) / 14.0
        assert np.allclose(scaled, expected, atol=1e-14)

    def test_degenerate_single_class(self):
        w = TriageWeights(raw=np.array([3.0]))
        assert np.allclose(scale_for_conditioning(w), [1.0])


class TestParseLambda:
    def test_parses_raw_vector(self):
        w = parse_lambda("5,1,1,1")
        assert np.array_equal(w.raw, [5.0, 1.0, 1.0, 1.0])

    def test_rejects_garbage(self):
        with pytest.raises(ValueError):
            parse_lambda("5,one,2")

"""The three training objectives against literal brute-force oracles."""

import math

import numpy as np
import pytest
import torch

from soundtriage.losses import (batch_loss, compute_loss, loss_sed, loss_set_a,
                                loss_set_ai)
from soundtriage.triage import TriageWeights

import oracles


def random_case(rng, n_classes=3, n_frames=4, scale=4.0):
    logits = torch.as_tensor(rng.uniform(-scale, scale, size=(n_classes, n_frames)))
    roll = (rng.uniform(size=(n_classes, n_frames)) < 0.4).astype(np.uint8)
    return logits, roll


def random_simplex(rng, n):
    x = rng.standard_gamma(0.5, size=n) + 1e-12
    return TriageWeights(raw=x / x.sum())


class TestLossSed:
    def test_single_frame_logit_zero(self):
        value = loss_sed(torch.zeros(1, 1, dtype=torch.float64), np.array([[1]]))
        assert float(value.total) == pytest.approx(math.log(2.0), rel=1e-12)

    def test_perfect_confident_predictions_saturate(self):
        rng = np.random.default_rng(0)
        roll = (rng.uniform(size=(3, 4)) < 0.5).astype(np.uint8)
        logits = torch.as_tensor(np.where(roll == 1, 50.0, -50.0))
        assert float(loss_sed(logits, roll).total) < 1e-20

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            logits, roll = random_case(rng)
            value = loss_sed(logits, roll)
            expected = oracles.bce_per_class(logits.numpy(), roll)
            assert oracles.relative_error(value.per_class.numpy(), expected) < 1e-9
            assert float(value.total) == pytest.approx(sum(expected), rel=1e-12)

    def test_nonnegative(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            logits, roll = random_case(rng, scale=10.0)
            assert float(loss_sed(logits, roll).total) >= 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            loss_sed(torch.zeros(2, 3), np.zeros((2, 4)))


class TestLossSetAi:
    def test_uniform_weights_equal_sed(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            logits, roll = random_case(rng)
            uniform = TriageWeights.uniform(3)
            a = loss_set_ai(logits, roll, uniform)
            b = loss_sed(logits, roll)
            assert oracles.relative_error(a.per_class.numpy(), b.per_class.numpy()) < 1e-9

    def test_single_class_mass(self):
        rng = np.random.default_rng(4)
        logits, roll = random_case(rng)
        w = TriageWeights(raw=np.array([0.0, 1.0, 0.0]))
        value = loss_set_ai(logits, roll, w)
        sed = loss_sed(logits, roll)
        assert float(value.total) == pytest.approx(3 * float(sed.per_class[1]), rel=1e-9)

    def test_matches_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            logits, roll = random_case(rng)
            w = random_simplex(rng, 3)
            value = loss_set_ai(logits, roll, w)
            expected = oracles.weighted_all_frames(logits.numpy(), roll, w.normalized)
            assert oracles.relative_error(value.per_class.numpy(), expected) < 1e-9

    def test_monotone_in_target_weight(self):
        rng = np.random.default_rng(6)
        logits, roll = random_case(rng)
        values = []
        for target_weight in (1.0, 2.0, 5.0, 10.0):
            raw = np.ones(3)
            raw[1] = target_weight
            w = TriageWeights(raw=raw)
            values.append(float(loss_set_ai(logits, roll, w).per_class[1]))
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_weight_count_mismatch(self):
        with pytest.raises(ValueError):
            loss_set_ai(torch.zeros(3, 2), np.zeros((3, 2)), TriageWeights.uniform(4))


class TestLossSetA:
    def test_all_inactive_equals_sed_for_any_weights(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            logits = torch.as_tensor(rng.uniform(-4, 4, size=(3, 5)))
            roll = np.zeros((3, 5), dtype=np.uint8)
            w = random_simplex(rng, 3)
            a = loss_set_a(logits, roll, w)
            b = loss_sed(logits, roll)
            assert oracles.relative_error(a.per_class.numpy(), b.per_class.numpy()) < 1e-12

    def test_uniform_weights_equal_sed(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            logits, roll = random_case(rng)
            a = loss_set_a(logits, roll, TriageWeights.uniform(3))
            b = loss_sed(logits, roll)
            assert oracles.relative_error(a.per_class.numpy(), b.per_class.numpy()) < 1e-9

    def test_matches_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            logits, roll = random_case(rng)
            w = random_simplex(rng, 3)
            value = loss_set_a(logits, roll, w)
            expected = oracles.weighted_active_frames(logits.numpy(), roll, w.normalized)
            assert oracles.relative_error(value.per_class.numpy(), expected) < 1e-9


class TestGradients:
    @pytest.mark.parametrize("kind", ["sed", "set_ai", "set_a"])
    def test_logit_gradients_match_finite_differences(self, kind):
        rng = np.random.default_rng(10)
        logits_np = rng.uniform(-3, 3, size=(3, 4))
        roll = (rng.uniform(size=(3, 4)) < 0.5).astype(np.uint8)
        w = random_simplex(rng, 3)

        def scalar(flat):
            t = torch.as_tensor(flat.reshape(3, 4), dtype=torch.float64)
            return float(compute_loss(kind, t, roll, w).total)

        logits = torch.as_tensor(logits_np, dtype=torch.float64).requires_grad_(True)
        compute_loss(kind, logits, roll, w).total.backward()
        fd = oracles.central_difference(scalar, logits_np.ravel(), step=1e-3)
        assert oracles.relative_error(logits.grad.numpy().ravel(), fd, floor=1e-8) < 1e-4


class TestBatchLoss:
    @pytest.mark.parametrize("kind", ["sed", "set_ai", "set_a"])
    def test_equals_mean_of_per_clip_totals(self, kind):
        rng = np.random.default_rng(11)
        logits = torch.as_tensor(rng.uniform(-3, 3, size=(4, 3, 5)))
        targets = torch.as_tensor(
            (rng.uniform(size=(4, 3, 5)) < 0.4).astype(np.float64))
        w = random_simplex(rng, 3)
        batched = float(batch_loss(kind, logits, targets, w))
        singles = [float(compute_loss(kind, logits[b], targets[b], w).total)
                   for b in range(4)]
        assert batched == pytest.approx(np.mean(singles), rel=1e-12)

    def test_requires_weights_for_weighted_kinds(self):
        logits = torch.zeros(1, 2, 3)
        with pytest.raises(ValueError):
            batch_loss("set_a", logits, torch.zeros(1, 2, 3))
        with pytest.raises(ValueError):
            compute_loss("nonsense", torch.zeros(2, 3), np.zeros((2, 3)))


class TestLossValueInvariants:
    @pytest.mark.parametrize("kind", ["sed", "set_ai", "set_a"])
    def test_total_is_sum_of_per_class(self, kind):
        rng = np.random.default_rng(12)
        logits, roll = random_case(rng)
        value = compute_loss(kind, logits, roll, random_simplex(rng, 3))
        assert float(value.total) == pytest.approx(
            float(value.per_class.sum()), rel=1e-12)

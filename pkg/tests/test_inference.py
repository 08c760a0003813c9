"""Prediction, post-processing, event extraction, and grid tuning."""

import numpy as np
import pytest
import torch

from soundtriage.backbone import BackboneConfig, DetectorBackbone
from soundtriage.conditioning import TriageConditioner
from soundtriage.dataio import (EventRoll, FeatureConfig, extract_logmel,
                                prepare_clips, rasterize, synthesize_dataset)
from soundtriage.inference import (PostprocessConfig, TuneResult, binarize,
                                   events_from_probs, extract_events, median_smooth,
                                   predict, tune_postprocessing, write_predictions)
from soundtriage.metrics import EventInstance
from soundtriage.training import Checkpoint, TrainConfig
from soundtriage.triage import TriageWeights, make_inference_weights, scale_for_conditioning

import oracles


@pytest.fixture(scope="module")
def tiny_checkpoint():
    """An untrained but fully wired checkpoint over 3 classes, 16 mel bands."""
    torch.manual_seed(0)
    backbone = DetectorBackbone(BackboneConfig(n_mels=16, n_classes=3))
    conditioner = TriageConditioner(3, backbone.n_channels)
    backbone.eval()
    conditioner.eval()
    return Checkpoint(
        backbone=backbone,
        conditioner=conditioner,
        train_config=TrainConfig(batch_size=4, epochs=1),
        feature_config=FeatureConfig(sample_rate=16000, n_mels=16),
        class_names=["a", "b", "c"],
        epoch=1,
        val_score=0.0,
        feature_mean=np.zeros(16),
        feature_std=np.ones(16),
    )


@pytest.fixture(scope="module")
def tiny_features(tiny_checkpoint):
    rng = np.random.default_rng(1)
    wave = rng.normal(0, 0.1, 16000 * 2)
    return extract_logmel(wave, tiny_checkpoint.feature_config)


class TestPredict:
    def test_deterministic_for_fixed_weights(self, tiny_checkpoint, tiny_features):
        w = make_inference_weights(1, 10.0, 3)
        a = predict(tiny_checkpoint, tiny_features, w)
        b = predict(tiny_checkpoint, tiny_features, w)
        assert np.array_equal(a, b)

    def test_uniform_equals_none(self, tiny_checkpoint, tiny_features):
        a = predict(tiny_checkpoint, tiny_features, None)
        b = predict(tiny_checkpoint, tiny_features, TriageWeights.uniform(3))
        assert np.array_equal(a, b)
        assert np.allclose(scale_for_conditioning(TriageWeights.uniform(3)), 1.0)

    def test_upsampled_to_feature_rate(self, tiny_checkpoint, tiny_features):
        probs = predict(tiny_checkpoint, tiny_features, None)
        assert probs.shape == (3, tiny_features.n_frames)
        assert ((probs > 0) & (probs < 1)).all()
        # blocks of 32 frames share one value
        assert np.array_equal(probs[:, 0], probs[:, 31])

    def test_output_independent_of_other_clips(self, tiny_checkpoint, tiny_features):
        rng = np.random.default_rng(2)
        other = extract_logmel(rng.normal(0, 0.1, 16000),
                               tiny_checkpoint.feature_config)
        first = predict(tiny_checkpoint, tiny_features, None)
        predict(tiny_checkpoint, other, None)
        again = predict(tiny_checkpoint, tiny_features, None)
        assert np.array_equal(first, again)

    def test_weight_count_mismatch(self, tiny_checkpoint, tiny_features):
        with pytest.raises(ValueError):
            predict(tiny_checkpoint, tiny_features, TriageWeights.uniform(4))

    def test_different_weights_change_output(self, tiny_checkpoint, tiny_features):
        a = predict(tiny_checkpoint, tiny_features, None)
        b = predict(tiny_checkpoint, tiny_features, make_inference_weights(0, 25.0, 3))
        assert not np.allclose(a, b)


class TestBinarize:
    def test_boundary_is_strict(self):
        probs = np.full((2, 5), 0.5)
        roll = binarize(probs, np.array([0.5, 0.5]), 0.02)
        assert roll.active.sum() == 0

    def test_threshold_to_zero_activates_everything(self):
        rng = np.random.default_rng(3)
        probs = rng.uniform(0.01, 0.99, size=(2, 10))
        roll = binarize(probs, np.array([0.005, 0.005]), 0.02)
        assert roll.active.all()

    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(4)
        probs = rng.uniform(size=(3, 40))
        thresholds = rng.uniform(0.2, 0.8, size=3)
        roll = binarize(probs, thresholds, 0.02)
        for n in range(3):
            for t in range(40):
                assert roll.active[n, t] == (1 if probs[n, t] > thresholds[n] else 0)

    def test_invalid_thresholds(self):
        with pytest.raises(ValueError):
            binarize(np.zeros((1, 3)), np.array([0.0]), 0.02)
        with pytest.raises(ValueError):
            binarize(np.zeros((1, 3)), np.array([0.5, 0.5]), 0.02)


class TestMedianSmooth:
    def test_size_one_identity(self):
        roll = EventRoll(np.array([[1, 0, 1, 1, 0]]), 0.02)
        out = median_smooth(roll, np.array([1]))
        assert np.array_equal(out.active, roll.active)

    def test_documented_example(self):
        roll = EventRoll(np.array([[1, 0, 1, 1, 0]]), 0.02)
        out = median_smooth(roll, np.array([3]))
        assert out.active.tolist() == [[1, 1, 1, 1, 0]]

    def test_isolated_frame_removed(self):
        roll = EventRoll(np.array([[0, 0, 1, 0, 0]]), 0.02)
        out = median_smooth(roll, np.array([3]))
        assert out.active.sum() == 0

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            row = (rng.uniform(size=30) < 0.5).astype(np.uint8)
            size = int(rng.choice([1, 3, 5, 7, 9, 11]))
            out = median_smooth(EventRoll(row[None, :], 0.02), np.array([size]))
            expected = oracles.median_filter_replicated(row, size)
            assert np.array_equal(out.active[0], expected)

    def test_per_class_sizes(self):
        roll = EventRoll(np.array([[0, 0, 1, 0, 0], [0, 0, 1, 0, 0]]), 0.02)
        out = median_smooth(roll, np.array([1, 3]))
        assert out.active[0].tolist() == [0, 0, 1, 0, 0]
        assert out.active[1].tolist() == [0, 0, 0, 0, 0]

    def test_even_size_rejected(self):
        roll = EventRoll(np.zeros((1, 5), dtype=np.uint8), 0.02)
        with pytest.raises(ValueError):
            median_smooth(roll, np.array([4]))


class TestExtractEvents:
    def test_empty_roll(self):
        assert extract_events(EventRoll(np.zeros((2, 10), dtype=np.uint8), 0.02)) == []

    def test_single_run_boundaries(self):
        roll = np.zeros((1, 10), dtype=np.uint8)
        roll[0, 2:5] = 1
        events = extract_events(EventRoll(roll, 0.02))
        assert len(events) == 1
        assert events[0].onset == pytest.approx(0.04)
        assert events[0].offset == pytest.approx(0.10)

    def test_two_runs_with_single_gap(self):
        roll = np.array([[1, 1, 0, 1, 1]], dtype=np.uint8)
        events = extract_events(EventRoll(roll, 0.02))
        assert len(events) == 2

    def test_run_to_clip_end(self):
        roll = np.array([[0, 0, 1, 1]], dtype=np.uint8)
        events = extract_events(EventRoll(roll, 0.5))
        assert events[0].offset == pytest.approx(2.0)

    def test_roundtrip_with_rasterize(self):
        from soundtriage.dataio import ClipAnnotation

        hop = 0.25
        events = [(0, 0.25, 0.75), (1, 1.0, 1.5), (0, 2.0, 2.5)]
        ann = ClipAnnotation("c", 4.0, events)
        roll = rasterize(ann, 16, hop, 2)
        extracted = extract_events(roll)
        got = sorted((e.class_index, e.onset, e.offset) for e in extracted)
        assert got == sorted(events)


class TestPostprocessConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            PostprocessConfig(thresholds=np.array([0.5, 1.5]),
                              median_sizes=np.array([1, 1]))
        with pytest.raises(ValueError):
            PostprocessConfig(thresholds=np.array([0.5]), median_sizes=np.array([2]))

    def test_roundtrip(self):
        config = PostprocessConfig.uniform(3, 0.4, 5)
        again = PostprocessConfig.from_dict(config.to_dict())
        assert np.array_equal(config.thresholds, again.thresholds)
        assert np.array_equal(config.median_sizes, again.median_sizes)


@pytest.fixture(scope="module")
def tuned_setup(tiny_checkpoint):
    clips = synthesize_dataset(4, 3, 1.5, seed=6)
    prepared = prepare_clips(clips, 3, tiny_checkpoint.feature_config, pool_factor=32)
    return tiny_checkpoint, prepared


class TestTunePostprocessing:
    def test_single_point_grid_returned(self, tuned_setup):
        ckpt, prepared = tuned_setup
        result = tune_postprocessing(ckpt, prepared, weight_grid=[7.0],
                                     threshold_grid=[0.4], median_grid=[3])
        assert np.all(result.postprocess.thresholds == 0.4)
        assert np.all(result.postprocess.median_sizes == 3)
        assert np.all(result.target_weights == 7.0)

    def test_argmax_verified_by_full_reevaluation(self, tuned_setup):
        ckpt, prepared = tuned_setup
        thresholds = [0.3, 0.5, 0.7]
        medians = [1, 3]
        weights = [1.0, 10.0]
        result = tune_postprocessing(ckpt, prepared, weight_grid=weights,
                                     threshold_grid=thresholds, median_grid=medians)
        for cls in range(3):
            best = None
            for thr in thresholds:
                for med in medians:
                    for w in weights:
                        lam = make_inference_weights(cls, w, 3)
                        tp = fp = fn = 0
                        for clip in prepared:
                            probs = predict(ckpt, clip.features, lam)
                            row = (probs[cls] > thr).astype(np.uint8)
                            row = oracles.median_filter_replicated(row, med)
                            ref = clip.roll.active[cls]
                            tp += int(((row == 1) & (ref == 1)).sum())
                            fp += int(((row == 1) & (ref == 0)).sum())
                            fn += int(((row == 0) & (ref == 1)).sum())
                        score = oracles.f1_from_counts(tp, fp, fn)
                        if best is None or score > best[0]:
                            best = (score, thr, med, w)
            assert result.scores[cls] == pytest.approx(best[0], abs=1e-12)
            # the returned point must score exactly as well as the argmax
            assert best[0] == pytest.approx(
                max(best[0], result.scores[cls]), abs=1e-12)

    def test_tie_breaks_toward_smallest(self, tuned_setup):
        ckpt, prepared = tuned_setup
        # probabilities never exceed thresholds -> every grid point ties at 0
        result = tune_postprocessing(ckpt, prepared, weight_grid=[5.0, 1.0],
                                     threshold_grid=[0.999998, 0.999999],
                                     median_grid=[3, 1])
        assert np.all(result.postprocess.thresholds == 0.999998)
        assert np.all(result.postprocess.median_sizes == 1)
        assert np.all(result.target_weights == 1.0)

    def test_empty_grid_rejected(self, tuned_setup):
        ckpt, prepared = tuned_setup
        with pytest.raises(ValueError):
            tune_postprocessing(ckpt, prepared, weight_grid=[])
        with pytest.raises(ValueError):
            tune_postprocessing(ckpt, [], weight_grid=[1.0])

    def test_result_roundtrip(self, tuned_setup, tmp_path):
        ckpt, prepared = tuned_setup
        result = tune_postprocessing(ckpt, prepared, weight_grid=[1.0],
                                     threshold_grid=[0.5], median_grid=[1])
        path = tmp_path / "postproc.json"
        result.save(path)
        loaded = TuneResult.load(path)
        assert np.array_equal(loaded.postprocess.thresholds,
                              result.postprocess.thresholds)
        assert np.array_equal(loaded.target_weights, result.target_weights)
        assert loaded.metric_kind == result.metric_kind


class TestWritePredictions:
    def test_jsonl_format(self, tmp_path):
        path = tmp_path / "predictions.jsonl"
        events = [[EventInstance(0, 0.0, 0.5)], []]
        write_predictions(path, ["c1", "c2"],
                          [TriageWeights.uniform(2)] * 2, events)
        import json

        lines = path.read_text().splitlines()
        assert len(lines) == 2
        first = json.loads(lines[0])
        assert first["clip_id"] == "c1"
        assert first["lambda"] == [1.0, 1.0]
        assert first["events"] == [{"class": 0, "onset": 0.0, "offset": 0.5}]


class TestClassPermutation:
    def test_postprocessing_commutes_with_class_permutation(self):
        rng = np.random.default_rng(7)
        probs = rng.uniform(size=(4, 60))
        thresholds = rng.uniform(0.2, 0.8, size=4)
        sizes = np.array([1, 3, 5, 3])
        perm = np.array([2, 0, 3, 1])

        direct = median_smooth(binarize(probs, thresholds, 0.02), sizes)
        permuted = median_smooth(
            binarize(probs[perm], thresholds[perm], 0.02), sizes[perm])
        assert np.array_equal(direct.active[perm], permuted.active)


class TestEventsFromProbs:
    def test_chain(self):
        probs = np.array([[0.9, 0.9, 0.1, 0.9, 0.9]])
        config = PostprocessConfig.uniform(1, 0.5, 1)
        events = events_from_probs(probs, config, 0.02)
        assert len(events) == 2
        smoothed = events_from_probs(probs, PostprocessConfig.uniform(1, 0.5, 3), 0.02)
        assert len(smoothed) == 1
